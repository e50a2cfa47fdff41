//! Finite-difference gradient verification.
//!
//! Central differences are the independent oracle for every backward rule:
//! they only ever run forward passes, so the two paths share no gradient
//! code. The suite covers each primitive op, the LSTM recurrence, and a
//! full two-phase model end to end.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::model::{ModelConfig, PhaseModel};
use crate::tensor::{Tape, Tensor, TensorError};

/// Step used by the oracle throughout the suite.
pub const FD_STEP: f64 = 1e-5;
/// Maximum relative error accepted between analytic and numeric gradients.
pub const GRAD_TOL: f64 = 1e-4;

/// Central-difference gradient of a scalar function at `x`:
/// `(f(x + h·e_i) − f(x − h·e_i)) / 2h` per coordinate. `f` sees freshly
/// built probe tensors and must be a pure function of their values.
pub fn finite_difference_grad<F>(mut f: F, x: &Tensor, h: f64) -> Result<Tensor, TensorError>
where
    F: FnMut(&Tensor) -> Result<f64, TensorError>,
{
    if !h.is_finite() || h <= 0.0 {
        return Err(TensorError::Contract("finite differences require h > 0".into()));
    }
    let base = x.values();
    let shape = x.shape();
    let mut grad = vec![0.0; base.len()];
    for i in 0..base.len() {
        let mut plus = base.clone();
        plus[i] += h;
        let mut minus = base.clone();
        minus[i] -= h;
        let fp = f(&Tensor::new(&shape, plus)?)?;
        let fm = f(&Tensor::new(&shape, minus)?)?;
        grad[i] = (fp - fm) / (2.0 * h);
    }
    Tensor::new(&shape, grad)
}

/// In-place variant for model parameters: perturbs one coordinate at a
/// time and restores the original bits afterwards.
pub(crate) fn fd_param_grad<F>(param: &Tensor, mut f: F, h: f64) -> Result<Vec<f64>, TensorError>
where
    F: FnMut() -> Result<f64, TensorError>,
{
    let n = param.numel();
    let mut grad = vec![0.0; n];
    for i in 0..n {
        let orig = param.with_values(|v| v[i]);
        param.update_values(|v| v[i] = orig + h);
        let fp = f();
        param.update_values(|v| v[i] = orig - h);
        let fm = f();
        param.update_values(|v| v[i] = orig);
        grad[i] = (fp? - fm?) / (2.0 * h);
    }
    Ok(grad)
}

/// Relative error between an analytic and a numeric gradient entry.
/// Differences below 1e-9 count as agreement, which keeps exact zeros and
/// oracle roundoff from registering as error.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let diff = (analytic - numeric).abs();
    if diff < 1e-9 {
        0.0
    } else {
        diff / analytic.abs().max(numeric.abs())
    }
}

/// Result of one named gradient check.
#[derive(Debug, Clone)]
pub struct CheckOutcome {
    pub name: String,
    pub max_rel_err: f64,
    pub passed: bool,
}

fn outcome(name: &str, max_rel_err: f64) -> CheckOutcome {
    CheckOutcome {
        name: name.to_string(),
        max_rel_err,
        passed: max_rel_err < GRAD_TOL,
    }
}

fn random_values(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-2.0..2.0)).collect()
}

fn random_param(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::param(shape, random_values(rng, n)).expect("random param")
}

type BuildFn<'a> = dyn Fn(&mut Tape, &[Tensor]) -> Result<Tensor, TensorError> + 'a;

/// Check every input's gradient of a scalar-valued graph against the
/// finite-difference oracle.
fn check_inputs(name: &str, inputs: &[Tensor], build: &BuildFn) -> Result<CheckOutcome, TensorError> {
    for t in inputs {
        t.zero_grad();
    }
    let mut tape = Tape::new();
    let loss = build(&mut tape, inputs)?;
    tape.backward(&loss)?;

    let mut max_err: f64 = 0.0;
    for (i, input) in inputs.iter().enumerate() {
        let analytic = input.grad().unwrap_or_else(|| vec![0.0; input.numel()]);
        let numeric = finite_difference_grad(
            |probe| {
                let mut swapped = inputs.to_vec();
                swapped[i] = probe.clone();
                let mut tape = Tape::new();
                Ok(build(&mut tape, &swapped)?.scalar_value())
            },
            input,
            FD_STEP,
        )?;
        for (&a, n) in analytic.iter().zip(numeric.values()) {
            max_err = max_err.max(relative_error(a, n));
        }
    }
    for t in inputs {
        t.zero_grad();
    }
    Ok(outcome(name, max_err))
}

/// Gradient checks for each primitive operation on random inputs.
pub fn run_op_checks(seed: u64) -> Result<Vec<CheckOutcome>, TensorError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();

    // every op output is folded to a scalar through a fixed random weight
    // so no gradient entry can cancel
    let weighted_sum = |tape: &mut Tape, x: &Tensor, w: &Tensor| -> Result<Tensor, TensorError> {
        let prod = tape.mul(x, w)?;
        Ok(tape.sum(&prod))
    };

    {
        let a = random_param(&mut rng, &[3, 4]);
        let b = random_param(&mut rng, &[4, 2]);
        let w = Tensor::new(&[3, 2], random_values(&mut rng, 6))?;
        out.push(check_inputs("op.matmul", &[a, b], &|tape, ins| {
            let c = tape.matmul(&ins[0], &ins[1])?;
            weighted_sum(tape, &c, &w)
        })?);
    }
    {
        let a = random_param(&mut rng, &[3, 4]);
        let b = random_param(&mut rng, &[3, 4]);
        let w = Tensor::new(&[3, 4], random_values(&mut rng, 12))?;
        out.push(check_inputs("op.add", &[a.clone(), b.clone()], &|tape, ins| {
            let c = tape.add(&ins[0], &ins[1])?;
            weighted_sum(tape, &c, &w)
        })?);
        out.push(check_inputs("op.mul", &[a, b], &|tape, ins| {
            let c = tape.mul(&ins[0], &ins[1])?;
            weighted_sum(tape, &c, &w)
        })?);
    }
    {
        let x = random_param(&mut rng, &[2, 5]);
        let w = Tensor::new(&[2, 5], random_values(&mut rng, 10))?;
        out.push(check_inputs("op.sigmoid", std::slice::from_ref(&x), &|tape, ins| {
            let y = tape.sigmoid(&ins[0]);
            weighted_sum(tape, &y, &w)
        })?);
        out.push(check_inputs("op.tanh", &[x], &|tape, ins| {
            let y = tape.tanh(&ins[0]);
            weighted_sum(tape, &y, &w)
        })?);
    }
    {
        let x = random_param(&mut rng, &[3, 4]);
        let b = random_param(&mut rng, &[4]);
        let w = Tensor::new(&[3, 4], random_values(&mut rng, 12))?;
        out.push(check_inputs("op.add_row_bias", &[x, b], &|tape, ins| {
            let y = tape.add_row_bias(&ins[0], &ins[1])?;
            weighted_sum(tape, &y, &w)
        })?);
    }
    {
        let a = random_param(&mut rng, &[3, 2]);
        let b = random_param(&mut rng, &[3, 3]);
        let w = Tensor::new(&[3, 5], random_values(&mut rng, 15))?;
        out.push(check_inputs("op.concat_rows", &[a, b], &|tape, ins| {
            let y = tape.concat_rows(&ins[0], &ins[1])?;
            weighted_sum(tape, &y, &w)
        })?);
    }
    {
        let x = random_param(&mut rng, &[4, 3]);
        let w = Tensor::new(&[2, 3], random_values(&mut rng, 6))?;
        out.push(check_inputs("op.slice_rows", &[x], &|tape, ins| {
            let y = tape.slice_rows(&ins[0], 1, 2)?;
            weighted_sum(tape, &y, &w)
        })?);
    }
    {
        let x = random_param(&mut rng, &[3, 5]);
        let w = Tensor::new(&[3, 3], random_values(&mut rng, 9))?;
        out.push(check_inputs("op.slice_cols", &[x], &|tape, ins| {
            let y = tape.slice_cols(&ins[0], 1, 3)?;
            weighted_sum(tape, &y, &w)
        })?);
    }
    {
        let a = random_param(&mut rng, &[1, 4]);
        let b = random_param(&mut rng, &[2, 4]);
        let c = random_param(&mut rng, &[1, 4]);
        let w = Tensor::new(&[4, 4], random_values(&mut rng, 16))?;
        out.push(check_inputs("op.stack_rows", &[a, b, c], &|tape, ins| {
            let y = tape.stack_rows(ins)?;
            weighted_sum(tape, &y, &w)
        })?);
    }
    {
        let x = random_param(&mut rng, &[5]);
        let w = Tensor::new(&[3, 5], random_values(&mut rng, 15))?;
        out.push(check_inputs("op.repeat_rows", &[x], &|tape, ins| {
            let y = tape.repeat_rows(&ins[0], 3)?;
            weighted_sum(tape, &y, &w)
        })?);
    }
    {
        let x = random_param(&mut rng, &[5]);
        let w = Tensor::new(&[5], random_values(&mut rng, 5))?;
        out.push(check_inputs("op.softmax", &[x], &|tape, ins| {
            let y = tape.softmax(&ins[0])?;
            weighted_sum(tape, &y, &w)
        })?);
    }
    {
        let x = random_param(&mut rng, &[4, 3]);
        let w = Tensor::new(&[3], random_values(&mut rng, 3))?;
        out.push(check_inputs("op.mean_rows", &[x], &|tape, ins| {
            let y = tape.mean_rows(&ins[0])?;
            weighted_sum(tape, &y, &w)
        })?);
    }
    {
        let logits = random_param(&mut rng, &[4]);
        out.push(check_inputs("op.cross_entropy", &[logits], &|tape, ins| {
            let loss = tape.cross_entropy(&ins[0], 2)?;
            tape.scale(&loss, 1.3)
        })?);
    }
    {
        let table = random_param(&mut rng, &[6, 3]);
        let w = Tensor::new(&[4, 3], random_values(&mut rng, 12))?;
        out.push(check_inputs("op.gather_rows", &[table], &|tape, ins| {
            let y = tape.gather_rows(&ins[0], &[0, 2, 2, 5])?;
            weighted_sum(tape, &y, &w)
        })?);
    }
    {
        let x = random_param(&mut rng, &[2, 6]);
        let w = Tensor::new(&[3, 4], random_values(&mut rng, 12))?;
        out.push(check_inputs("op.reshape", &[x], &|tape, ins| {
            let y = tape.reshape(&ins[0], &[3, 4])?;
            weighted_sum(tape, &y, &w)
        })?);
    }
    {
        let x = random_param(&mut rng, &[3, 3]);
        out.push(check_inputs("op.sum", &[x], &|tape, ins| Ok(tape.sum(&ins[0])))?);
    }
    {
        let x = random_param(&mut rng, &[2, 3]);
        let w = Tensor::new(&[2, 3], random_values(&mut rng, 6))?;
        out.push(check_inputs("op.scale", &[x], &|tape, ins| {
            let y = tape.scale(&ins[0], 1.7)?;
            weighted_sum(tape, &y, &w)
        })?);
    }

    Ok(out)
}

/// Check every parameter of a scalar loss built by `build_loss` against
/// the in-place oracle.
fn check_params(
    name: &str,
    params: &[(&'static str, Tensor)],
    build_loss: &dyn Fn(&mut Tape) -> Result<Tensor, TensorError>,
) -> Result<CheckOutcome, TensorError> {
    for (_, p) in params {
        p.zero_grad();
    }
    let mut tape = Tape::new();
    let loss = build_loss(&mut tape)?;
    tape.backward(&loss)?;

    let mut max_err: f64 = 0.0;
    for (_, param) in params {
        let analytic = param.grad().unwrap_or_else(|| vec![0.0; param.numel()]);
        let numeric = fd_param_grad(
            param,
            || {
                let mut tape = Tape::new();
                Ok(build_loss(&mut tape)?.scalar_value())
            },
            FD_STEP,
        )?;
        for (&a, &n) in analytic.iter().zip(numeric.iter()) {
            max_err = max_err.max(relative_error(a, n));
        }
    }
    for (_, p) in params {
        p.zero_grad();
    }
    Ok(outcome(name, max_err))
}

/// LSTM recurrence check: sum of the bi-LSTM output over a 3-token input,
/// differentiated through every LSTM parameter and the embedding.
pub fn run_lstm_check(seed: u64) -> Result<CheckOutcome, TensorError> {
    let cfg = ModelConfig {
        embed_dim: 3,
        hidden: 4,
        seed,
        init_scale: 1.0,
        attention: true,
    };
    let model = PhaseModel::init(&cfg, 8);
    let ids = [1usize, 3, 5];
    let params: Vec<(&'static str, Tensor)> = model
        .named_params()
        .into_iter()
        .filter(|(name, _)| name.starts_with("fwd.") || name.starts_with("bwd.") || *name == "embedding")
        .collect();
    check_params("lstm.bilstm_encode", &params, &|tape| {
        let embeds = tape.gather_rows(&model.embedding, &ids)?;
        let encoded = model.bilstm_encode(tape, &embeds)?;
        Ok(tape.sum(&encoded))
    })
}

/// End-to-end check: every parameter of a two-phase model (d_z = 6, h = 4)
/// against the cross-entropy loss of a 2-example batch of 5-token tweets.
pub fn run_model_checks(seed: u64) -> Result<Vec<CheckOutcome>, TensorError> {
    let vocab_size = 12;
    let examples: [(&[usize], &[usize], usize); 2] =
        [(&[2, 3, 4, 5, 6], &[7, 8], 0), (&[4, 9, 10, 1, 2], &[7, 8], 1)];

    let mut out = Vec::new();
    for (phase_idx, phase_name) in [(1u64, "model.phase1"), (2, "model.phase2")] {
        let cfg = ModelConfig {
            embed_dim: 6,
            hidden: 4,
            seed: seed.wrapping_add(phase_idx),
            init_scale: 1.0,
            attention: true,
        };
        let model = PhaseModel::init(&cfg, vocab_size);
        let params = model.named_params();
        out.push(check_params(phase_name, &params, &|tape| {
            let mut total: Option<Tensor> = None;
            for (tweet, target, label) in examples {
                let fwd = model.forward(tape, tweet, target)?;
                let loss = tape.cross_entropy(&fwd.logits, label)?;
                total = Some(match total {
                    Some(acc) => tape.add(&acc, &loss)?,
                    None => loss,
                });
            }
            tape.scale(&total.expect("two examples"), 0.5)
        })?);
    }
    Ok(out)
}

/// The full verification suite: per-op checks, the LSTM recurrence, and
/// both phases of the end-to-end model.
pub fn run_suite(seed: u64) -> Result<Vec<CheckOutcome>, TensorError> {
    let mut out = run_op_checks(seed)?;
    out.push(run_lstm_check(seed)?);
    out.extend(run_model_checks(seed)?);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn oracle_matches_known_derivative() {
        // f(x) = Σ x² → ∇f = 2x
        let x = Tensor::new(&[3], vec![1.0, -0.5, 2.0]).unwrap();
        let grad = finite_difference_grad(
            |t| Ok(t.with_values(|v| v.iter().map(|x| x * x).sum())),
            &x,
            1e-5,
        )
        .unwrap();
        for (g, v) in grad.values().iter().zip(x.values()) {
            assert!(relative_error(*g, 2.0 * v) < 1e-6, "{g} vs {}", 2.0 * v);
        }
    }

    #[test]
    fn oracle_rejects_non_positive_step() {
        let x = Tensor::new(&[1], vec![1.0]).unwrap();
        assert!(finite_difference_grad(|_| Ok(0.0), &x, 0.0).is_err());
        assert!(finite_difference_grad(|_| Ok(0.0), &x, -1e-5).is_err());
    }

    #[test]
    fn fd_param_grad_restores_bits() {
        let p = Tensor::param(&[2], vec![0.1, -0.7]).unwrap();
        let before: Vec<u64> = p.values().iter().map(|v| v.to_bits()).collect();
        fd_param_grad(&p, || Ok(p.with_values(|v| v.iter().sum())), 1e-5).unwrap();
        let after: Vec<u64> = p.values().iter().map(|v| v.to_bits()).collect();
        assert_eq!(before, after);
    }

    #[test]
    fn relative_error_semantics() {
        assert_eq!(relative_error(0.0, 0.0), 0.0);
        assert_eq!(relative_error(1.0, 1.0 + 5e-10), 0.0);
        assert!(relative_error(1.0, 1.1) > 0.05);
    }

    #[test]
    fn op_checks_pass_on_one_seed() {
        for check in run_op_checks(42).unwrap() {
            assert!(check.passed, "{} failed: {:.3e}", check.name, check.max_rel_err);
        }
    }

    #[test]
    fn lstm_check_passes() {
        let check = run_lstm_check(7).unwrap();
        assert!(check.passed, "{} failed: {:.3e}", check.name, check.max_rel_err);
    }
}
