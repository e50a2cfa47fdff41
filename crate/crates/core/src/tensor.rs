//! Tape-based reverse-mode automatic differentiation over dense `f64` tensors.
//!
//! The engine is define-by-run: a fresh [`Tape`] is created per forward pass,
//! every operation computes its result eagerly and pushes a record, and
//! [`Tape::backward`] replays the records in reverse to accumulate gradients.
//! Tensors are cheap handles (`Rc`) around shared storage; values are written
//! once at creation and only the optimizer mutates them afterwards.
//!
//! The operation set is deliberately small: exactly what a bi-directional
//! LSTM with target-conditioned attention and a softmax classifier needs.

use std::cell::{Ref, RefCell, RefMut};
use std::rc::Rc;
use std::sync::atomic::{AtomicU64, Ordering};

use thiserror::Error;

/// Errors raised by tensor construction and tape operations.
#[derive(Debug, Error)]
pub enum TensorError {
    #[error("{op}: dimension mismatch between {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: invalid shape {shape:?}: {reason}")]
    BadShape {
        op: &'static str,
        shape: Vec<usize>,
        reason: String,
    },
    #[error("{op}: non-finite value in input")]
    NotFinite { op: &'static str },
    #[error("gold label {label} out of range for {classes} classes")]
    BadLabel { label: usize, classes: usize },
    #[error("{op}: row index {index} out of range for {rows} rows")]
    BadIndex {
        op: &'static str,
        index: usize,
        rows: usize,
    },
    #[error("{op}: empty input")]
    EmptyInput { op: &'static str },
    #[error("contract violation: {0}")]
    Contract(String),
}

static NEXT_TENSOR_ID: AtomicU64 = AtomicU64::new(1);

struct TensorData {
    shape: Vec<usize>,
    values: Vec<f64>,
    grad: Option<Vec<f64>>,
    requires_grad: bool,
    /// True when this tensor is trainable or downstream of one.
    track: bool,
    id: u64,
}

/// Handle to a dense tensor. Cloning the handle shares storage and gradient;
/// operations always allocate fresh output storage.
#[derive(Clone)]
pub struct Tensor(Rc<RefCell<TensorData>>);

fn check_shape(op: &'static str, shape: &[usize]) -> Result<(), TensorError> {
    if shape.is_empty() || shape.contains(&0) {
        return Err(TensorError::BadShape {
            op,
            shape: shape.to_vec(),
            reason: "dims must be positive".into(),
        });
    }
    Ok(())
}

impl Tensor {
    fn build(shape: Vec<usize>, values: Vec<f64>, requires_grad: bool) -> Tensor {
        let track = requires_grad;
        Tensor(Rc::new(RefCell::new(TensorData {
            shape,
            values,
            grad: None,
            requires_grad,
            track,
            id: NEXT_TENSOR_ID.fetch_add(1, Ordering::Relaxed),
        })))
    }

    /// Constant (non-trainable) tensor from row-major values.
    pub fn new(shape: &[usize], values: Vec<f64>) -> Result<Tensor, TensorError> {
        check_shape("tensor", shape)?;
        let numel: usize = shape.iter().product();
        if values.len() != numel {
            return Err(TensorError::BadShape {
                op: "tensor",
                shape: shape.to_vec(),
                reason: format!("{} values for {} elements", values.len(), numel),
            });
        }
        Ok(Tensor::build(shape.to_vec(), values, false))
    }

    /// Trainable tensor; `backward` populates its gradient.
    pub fn param(shape: &[usize], values: Vec<f64>) -> Result<Tensor, TensorError> {
        let t = Tensor::new(shape, values)?;
        t.0.borrow_mut().requires_grad = true;
        t.0.borrow_mut().track = true;
        Ok(t)
    }

    pub fn zeros(shape: &[usize]) -> Tensor {
        check_shape("zeros", shape).expect("zeros: invalid shape");
        let numel: usize = shape.iter().product();
        Tensor::build(shape.to_vec(), vec![0.0; numel], false)
    }

    pub fn scalar(v: f64) -> Tensor {
        Tensor::build(vec![1], vec![v], false)
    }

    /// Convenience constructor from rows; all rows must be the same length.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Tensor, TensorError> {
        if rows.is_empty() {
            return Err(TensorError::EmptyInput { op: "from_rows" });
        }
        let cols = rows[0].len();
        let mut values = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(TensorError::BadShape {
                    op: "from_rows",
                    shape: vec![rows.len(), cols],
                    reason: "ragged rows".into(),
                });
            }
            values.extend_from_slice(r);
        }
        Tensor::new(&[rows.len(), cols], values)
    }

    fn data(&self) -> Ref<'_, TensorData> {
        self.0.borrow()
    }

    fn data_mut(&self) -> RefMut<'_, TensorData> {
        self.0.borrow_mut()
    }

    pub fn id(&self) -> u64 {
        self.data().id
    }

    pub fn shape(&self) -> Vec<usize> {
        self.data().shape.clone()
    }

    pub fn numel(&self) -> usize {
        self.data().values.len()
    }

    pub fn requires_grad(&self) -> bool {
        self.data().requires_grad
    }

    pub fn values(&self) -> Vec<f64> {
        self.data().values.clone()
    }

    /// Run `f` on the raw values without cloning.
    pub fn with_values<R>(&self, f: impl FnOnce(&[f64]) -> R) -> R {
        f(&self.data().values)
    }

    /// Value of a single-element tensor. Panics on larger tensors.
    pub fn scalar_value(&self) -> f64 {
        let d = self.data();
        assert_eq!(d.values.len(), 1, "scalar_value on tensor of shape {:?}", d.shape);
        d.values[0]
    }

    pub fn grad(&self) -> Option<Vec<f64>> {
        self.data().grad.clone()
    }

    pub fn zero_grad(&self) {
        self.data_mut().grad = None;
    }

    fn is_tracked(&self) -> bool {
        self.data().track
    }

    /// Mutate values in place, keeping the shape. Used by the optimizer
    /// and by finite-difference probing; everything else treats values as
    /// immutable after creation.
    pub(crate) fn update_values(&self, f: impl FnOnce(&mut [f64])) {
        f(&mut self.data_mut().values)
    }

    fn accumulate_grad(&self, delta: &[f64]) {
        let mut d = self.data_mut();
        let n = d.values.len();
        debug_assert_eq!(delta.len(), n);
        let g = d.grad.get_or_insert_with(|| vec![0.0; n]);
        for (gi, di) in g.iter_mut().zip(delta) {
            *gi += di;
        }
    }

    fn grad_snapshot(&self) -> Option<Vec<f64>> {
        self.data().grad.clone()
    }
}

impl std::fmt::Debug for Tensor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let d = self.data();
        f.debug_struct("Tensor")
            .field("shape", &d.shape)
            .field("values", &d.values)
            .field("requires_grad", &d.requires_grad)
            .finish()
    }
}

enum Op {
    MatMul,
    Add,
    Mul,
    Sigmoid,
    Tanh,
    AddRowBias,
    ConcatRows,
    SliceRows { start: usize },
    SliceCols { start: usize },
    StackRows,
    RepeatRows,
    Softmax,
    MeanRows,
    CrossEntropy { gold: usize, probs: Vec<f64> },
    GatherRows { ids: Vec<usize> },
    Reshape,
    Sum,
    Scale { factor: f64 },
}

struct Record {
    op: Op,
    inputs: Vec<Tensor>,
    output: Tensor,
}

/// Ordered record of operations for one forward pass.
///
/// Records are appended in execution order, so every operation's inputs
/// precede it; `backward` walks the records exactly once in reverse.
#[derive(Default)]
pub struct Tape {
    records: Vec<Record>,
}

fn require_2d(op: &'static str, t: &Tensor) -> Result<(usize, usize), TensorError> {
    let s = t.shape();
    if s.len() != 2 {
        return Err(TensorError::BadShape {
            op,
            shape: s,
            reason: "expected a 2-D tensor".into(),
        });
    }
    Ok((s[0], s[1]))
}

fn require_1d(op: &'static str, t: &Tensor) -> Result<usize, TensorError> {
    let s = t.shape();
    if s.len() != 1 {
        return Err(TensorError::BadShape {
            op,
            shape: s,
            reason: "expected a 1-D tensor".into(),
        });
    }
    Ok(s[0])
}

impl Tape {
    pub fn new() -> Tape {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    fn push(&mut self, op: Op, inputs: Vec<Tensor>, shape: Vec<usize>, values: Vec<f64>) -> Tensor {
        let out = Tensor::build(shape, values, false);
        out.data_mut().track = inputs.iter().any(|t| t.is_tracked());
        self.records.push(Record {
            op,
            inputs,
            output: out.clone(),
        });
        out
    }

    /// Matrix product `a[m,k] · b[k,n] -> [m,n]`.
    pub fn matmul(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor, TensorError> {
        let (m, k) = require_2d("matmul", a)?;
        let (k2, n) = require_2d("matmul", b)?;
        if k != k2 {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                lhs: a.shape(),
                rhs: b.shape(),
            });
        }
        let av = a.data();
        let bv = b.data();
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for p in 0..k {
                let aip = av.values[i * k + p];
                if aip == 0.0 {
                    continue;
                }
                let brow = &bv.values[p * n..(p + 1) * n];
                let orow = &mut out[i * n..(i + 1) * n];
                for (o, bpj) in orow.iter_mut().zip(brow) {
                    *o += aip * bpj;
                }
            }
        }
        drop(av);
        drop(bv);
        Ok(self.push(Op::MatMul, vec![a.clone(), b.clone()], vec![m, n], out))
    }

    fn elementwise_binary(
        &mut self,
        op_name: &'static str,
        op: Op,
        a: &Tensor,
        b: &Tensor,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Tensor, TensorError> {
        if a.shape() != b.shape() {
            return Err(TensorError::ShapeMismatch {
                op: op_name,
                lhs: a.shape(),
                rhs: b.shape(),
            });
        }
        let out: Vec<f64> = {
            let av = a.data();
            let bv = b.data();
            av.values.iter().zip(&bv.values).map(|(&x, &y)| f(x, y)).collect()
        };
        Ok(self.push(op, vec![a.clone(), b.clone()], a.shape(), out))
    }

    /// Elementwise sum of two tensors of identical shape.
    pub fn add(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor, TensorError> {
        self.elementwise_binary("add", Op::Add, a, b, |x, y| x + y)
    }

    /// Elementwise (Hadamard) product of two tensors of identical shape.
    pub fn mul(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor, TensorError> {
        self.elementwise_binary("mul", Op::Mul, a, b, |x, y| x * y)
    }

    pub fn sigmoid(&mut self, x: &Tensor) -> Tensor {
        let out: Vec<f64> = x.data().values.iter().map(|&v| sigmoid(v)).collect();
        self.push(Op::Sigmoid, vec![x.clone()], x.shape(), out)
    }

    pub fn tanh(&mut self, x: &Tensor) -> Tensor {
        let out: Vec<f64> = x.data().values.iter().map(|&v| v.tanh()).collect();
        self.push(Op::Tanh, vec![x.clone()], x.shape(), out)
    }

    /// Add a 1-D bias `[n]` to every row of `x[m,n]`. The only broadcast
    /// the engine supports.
    pub fn add_row_bias(&mut self, x: &Tensor, bias: &Tensor) -> Result<Tensor, TensorError> {
        let (m, n) = require_2d("add_row_bias", x)?;
        let bn = require_1d("add_row_bias", bias)?;
        if bn != n {
            return Err(TensorError::ShapeMismatch {
                op: "add_row_bias",
                lhs: x.shape(),
                rhs: bias.shape(),
            });
        }
        let out: Vec<f64> = {
            let xv = x.data();
            let bv = bias.data();
            let mut out = xv.values.clone();
            for i in 0..m {
                for j in 0..n {
                    out[i * n + j] += bv.values[j];
                }
            }
            out
        };
        Ok(self.push(Op::AddRowBias, vec![x.clone(), bias.clone()], vec![m, n], out))
    }

    /// Horizontal concatenation: row `t` of the result is `[a_t ‖ b_t]`.
    pub fn concat_rows(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor, TensorError> {
        let (m, p) = require_2d("concat_rows", a)?;
        let (m2, q) = require_2d("concat_rows", b)?;
        if m != m2 {
            return Err(TensorError::ShapeMismatch {
                op: "concat_rows",
                lhs: a.shape(),
                rhs: b.shape(),
            });
        }
        let out: Vec<f64> = {
            let av = a.data();
            let bv = b.data();
            let mut out = Vec::with_capacity(m * (p + q));
            for i in 0..m {
                out.extend_from_slice(&av.values[i * p..(i + 1) * p]);
                out.extend_from_slice(&bv.values[i * q..(i + 1) * q]);
            }
            out
        };
        Ok(self.push(Op::ConcatRows, vec![a.clone(), b.clone()], vec![m, p + q], out))
    }

    /// Contiguous row slice `x[start..start+len, :]`.
    pub fn slice_rows(&mut self, x: &Tensor, start: usize, len: usize) -> Result<Tensor, TensorError> {
        let (m, n) = require_2d("slice_rows", x)?;
        if len == 0 || start + len > m {
            return Err(TensorError::BadShape {
                op: "slice_rows",
                shape: x.shape(),
                reason: format!("slice {start}..{} out of range", start + len),
            });
        }
        let out = x.data().values[start * n..(start + len) * n].to_vec();
        Ok(self.push(Op::SliceRows { start }, vec![x.clone()], vec![len, n], out))
    }

    /// Contiguous column slice `x[:, start..start+len]`.
    pub fn slice_cols(&mut self, x: &Tensor, start: usize, len: usize) -> Result<Tensor, TensorError> {
        let (m, n) = require_2d("slice_cols", x)?;
        if len == 0 || start + len > n {
            return Err(TensorError::BadShape {
                op: "slice_cols",
                shape: x.shape(),
                reason: format!("slice {start}..{} out of range", start + len),
            });
        }
        let out: Vec<f64> = {
            let xv = x.data();
            let mut out = Vec::with_capacity(m * len);
            for i in 0..m {
                out.extend_from_slice(&xv.values[i * n + start..i * n + start + len]);
            }
            out
        };
        Ok(self.push(Op::SliceCols { start }, vec![x.clone()], vec![m, len], out))
    }

    /// Vertical concatenation of 2-D blocks sharing a column count.
    pub fn stack_rows(&mut self, parts: &[Tensor]) -> Result<Tensor, TensorError> {
        if parts.is_empty() {
            return Err(TensorError::EmptyInput { op: "stack_rows" });
        }
        let (_, n) = require_2d("stack_rows", &parts[0])?;
        let mut rows = 0;
        let mut out = Vec::new();
        for p in parts {
            let (pm, pn) = require_2d("stack_rows", p)?;
            if pn != n {
                return Err(TensorError::ShapeMismatch {
                    op: "stack_rows",
                    lhs: parts[0].shape(),
                    rhs: p.shape(),
                });
            }
            rows += pm;
            p.with_values(|v| out.extend_from_slice(v));
        }
        Ok(self.push(Op::StackRows, parts.to_vec(), vec![rows, n], out))
    }

    /// Tile a 1-D vector `[d]` into `m` identical rows `[m,d]`.
    pub fn repeat_rows(&mut self, x: &Tensor, m: usize) -> Result<Tensor, TensorError> {
        let d = require_1d("repeat_rows", x)?;
        if m == 0 {
            return Err(TensorError::EmptyInput { op: "repeat_rows" });
        }
        let out: Vec<f64> = {
            let xv = x.data();
            let mut out = Vec::with_capacity(m * d);
            for _ in 0..m {
                out.extend_from_slice(&xv.values);
            }
            out
        };
        Ok(self.push(Op::RepeatRows, vec![x.clone()], vec![m, d], out))
    }

    /// Numerically stable softmax over a 1-D tensor.
    pub fn softmax(&mut self, x: &Tensor) -> Result<Tensor, TensorError> {
        let _n = require_1d("softmax", x)?;
        let out: Vec<f64> = {
            let xv = x.data();
            if xv.values.iter().any(|v| !v.is_finite()) {
                return Err(TensorError::NotFinite { op: "softmax" });
            }
            softmax_slice(&xv.values)
        };
        Ok(self.push(Op::Softmax, vec![x.clone()], x.shape(), out))
    }

    /// Arithmetic mean over rows: `x[n,d] -> [d]`.
    pub fn mean_rows(&mut self, x: &Tensor) -> Result<Tensor, TensorError> {
        let (n, d) = require_2d("mean_rows", x)?;
        if n == 0 {
            return Err(TensorError::EmptyInput { op: "mean_rows" });
        }
        let out: Vec<f64> = {
            let xv = x.data();
            let mut out = vec![0.0; d];
            for row in xv.values.chunks_exact(d) {
                for (o, v) in out.iter_mut().zip(row) {
                    *o += v;
                }
            }
            for o in out.iter_mut() {
                *o /= n as f64;
            }
            out
        };
        Ok(self.push(Op::MeanRows, vec![x.clone()], vec![d], out))
    }

    /// `-log softmax(logits)[gold]` with the log-softmax fused for stability.
    pub fn cross_entropy(&mut self, logits: &Tensor, gold: usize) -> Result<Tensor, TensorError> {
        let c = require_1d("cross_entropy", logits)?;
        if gold >= c {
            return Err(TensorError::BadLabel { label: gold, classes: c });
        }
        let (loss, probs) = {
            let lv = logits.data();
            let max = lv.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let sum_exp: f64 = lv.values.iter().map(|&v| (v - max).exp()).sum();
            let lse = max + sum_exp.ln();
            let probs: Vec<f64> = lv.values.iter().map(|&v| (v - lse).exp()).collect();
            (lse - lv.values[gold], probs)
        };
        Ok(self.push(
            Op::CrossEntropy { gold, probs },
            vec![logits.clone()],
            vec![1],
            vec![loss],
        ))
    }

    /// Gather rows of `table[r,d]` by index; duplicate ids are allowed and
    /// their gradients accumulate.
    pub fn gather_rows(&mut self, table: &Tensor, ids: &[usize]) -> Result<Tensor, TensorError> {
        let (r, d) = require_2d("gather_rows", table)?;
        if ids.is_empty() {
            return Err(TensorError::EmptyInput { op: "gather_rows" });
        }
        let out: Vec<f64> = {
            let tv = table.data();
            let mut out = Vec::with_capacity(ids.len() * d);
            for &id in ids {
                if id >= r {
                    return Err(TensorError::BadIndex {
                        op: "gather_rows",
                        index: id,
                        rows: r,
                    });
                }
                out.extend_from_slice(&tv.values[id * d..(id + 1) * d]);
            }
            out
        };
        Ok(self.push(
            Op::GatherRows { ids: ids.to_vec() },
            vec![table.clone()],
            vec![ids.len(), d],
            out,
        ))
    }

    pub fn reshape(&mut self, x: &Tensor, shape: &[usize]) -> Result<Tensor, TensorError> {
        check_shape("reshape", shape)?;
        let numel: usize = shape.iter().product();
        if numel != x.numel() {
            return Err(TensorError::ShapeMismatch {
                op: "reshape",
                lhs: x.shape(),
                rhs: shape.to_vec(),
            });
        }
        let out = x.values();
        Ok(self.push(Op::Reshape, vec![x.clone()], shape.to_vec(), out))
    }

    /// Sum of all elements, as a `[1]` tensor.
    pub fn sum(&mut self, x: &Tensor) -> Tensor {
        let s: f64 = x.data().values.iter().sum();
        self.push(Op::Sum, vec![x.clone()], vec![1], vec![s])
    }

    /// Multiply every element by a constant.
    pub fn scale(&mut self, x: &Tensor, factor: f64) -> Result<Tensor, TensorError> {
        if !factor.is_finite() {
            return Err(TensorError::NotFinite { op: "scale" });
        }
        let out: Vec<f64> = x.data().values.iter().map(|&v| v * factor).collect();
        Ok(self.push(Op::Scale { factor }, vec![x.clone()], x.shape(), out))
    }

    /// Propagate gradients from a scalar loss back through every recorded
    /// operation. Gradients accumulate additively, both across multiple uses
    /// of a tensor and across repeated `backward` calls.
    pub fn backward(&mut self, loss: &Tensor) -> Result<(), TensorError> {
        if loss.numel() != 1 {
            return Err(TensorError::Contract(format!(
                "backward requires a scalar loss, got shape {:?}",
                loss.shape()
            )));
        }
        let loss_id = loss.id();
        if !self.records.iter().any(|r| r.output.id() == loss_id) {
            return Err(TensorError::Contract(
                "backward: loss was not produced on this tape".into(),
            ));
        }
        loss.accumulate_grad(&[1.0]);
        for rec in self.records.iter().rev() {
            if !rec.output.is_tracked() {
                continue;
            }
            let out_grad = match rec.output.grad_snapshot() {
                Some(g) => g,
                None => continue, // not on the path from this loss
            };
            backprop_record(rec, &out_grad);
        }
        Ok(())
    }
}

fn backprop_record(rec: &Record, dz: &[f64]) {
    let out_shape = rec.output.shape();
    match &rec.op {
        Op::MatMul => {
            let a = &rec.inputs[0];
            let b = &rec.inputs[1];
            let (m, k) = (a.shape()[0], a.shape()[1]);
            let n = b.shape()[1];
            if a.is_tracked() {
                // dA = dC · Bᵀ
                let da = b.with_values(|bv| {
                    let mut da = vec![0.0; m * k];
                    for i in 0..m {
                        for j in 0..n {
                            let d = dz[i * n + j];
                            if d == 0.0 {
                                continue;
                            }
                            for p in 0..k {
                                da[i * k + p] += d * bv[p * n + j];
                            }
                        }
                    }
                    da
                });
                a.accumulate_grad(&da);
            }
            if b.is_tracked() {
                // dB = Aᵀ · dC
                let db = a.with_values(|av| {
                    let mut db = vec![0.0; k * n];
                    for i in 0..m {
                        for p in 0..k {
                            let aip = av[i * k + p];
                            if aip == 0.0 {
                                continue;
                            }
                            for j in 0..n {
                                db[p * n + j] += aip * dz[i * n + j];
                            }
                        }
                    }
                    db
                });
                b.accumulate_grad(&db);
            }
        }
        Op::Add => {
            for input in &rec.inputs {
                if input.is_tracked() {
                    input.accumulate_grad(dz);
                }
            }
        }
        Op::Mul => {
            let a = &rec.inputs[0];
            let b = &rec.inputs[1];
            if a.is_tracked() {
                let da = b.with_values(|bv| dz.iter().zip(bv).map(|(&d, &y)| d * y).collect::<Vec<_>>());
                a.accumulate_grad(&da);
            }
            if b.is_tracked() {
                let db = a.with_values(|av| dz.iter().zip(av).map(|(&d, &x)| d * x).collect::<Vec<_>>());
                b.accumulate_grad(&db);
            }
        }
        Op::Sigmoid => {
            let x = &rec.inputs[0];
            if x.is_tracked() {
                let dx = rec
                    .output
                    .with_values(|s| dz.iter().zip(s).map(|(&d, &si)| d * si * (1.0 - si)).collect::<Vec<_>>());
                x.accumulate_grad(&dx);
            }
        }
        Op::Tanh => {
            let x = &rec.inputs[0];
            if x.is_tracked() {
                let dx = rec
                    .output
                    .with_values(|t| dz.iter().zip(t).map(|(&d, &ti)| d * (1.0 - ti * ti)).collect::<Vec<_>>());
                x.accumulate_grad(&dx);
            }
        }
        Op::AddRowBias => {
            let x = &rec.inputs[0];
            let bias = &rec.inputs[1];
            let (m, n) = (out_shape[0], out_shape[1]);
            if x.is_tracked() {
                x.accumulate_grad(dz);
            }
            if bias.is_tracked() {
                let mut db = vec![0.0; n];
                for i in 0..m {
                    for j in 0..n {
                        db[j] += dz[i * n + j];
                    }
                }
                bias.accumulate_grad(&db);
            }
        }
        Op::ConcatRows => {
            let a = &rec.inputs[0];
            let b = &rec.inputs[1];
            let m = out_shape[0];
            let p = a.shape()[1];
            let q = b.shape()[1];
            if a.is_tracked() {
                let mut da = Vec::with_capacity(m * p);
                for i in 0..m {
                    da.extend_from_slice(&dz[i * (p + q)..i * (p + q) + p]);
                }
                a.accumulate_grad(&da);
            }
            if b.is_tracked() {
                let mut db = Vec::with_capacity(m * q);
                for i in 0..m {
                    db.extend_from_slice(&dz[i * (p + q) + p..(i + 1) * (p + q)]);
                }
                b.accumulate_grad(&db);
            }
        }
        Op::SliceRows { start } => {
            let x = &rec.inputs[0];
            if x.is_tracked() {
                let (m, n) = (x.shape()[0], x.shape()[1]);
                let mut dx = vec![0.0; m * n];
                dx[start * n..start * n + dz.len()].copy_from_slice(dz);
                x.accumulate_grad(&dx);
            }
        }
        Op::SliceCols { start } => {
            let x = &rec.inputs[0];
            if x.is_tracked() {
                let (m, n) = (x.shape()[0], x.shape()[1]);
                let len = out_shape[1];
                let mut dx = vec![0.0; m * n];
                for i in 0..m {
                    dx[i * n + start..i * n + start + len].copy_from_slice(&dz[i * len..(i + 1) * len]);
                }
                x.accumulate_grad(&dx);
            }
        }
        Op::StackRows => {
            let mut offset = 0;
            for part in &rec.inputs {
                let numel = part.numel();
                if part.is_tracked() {
                    part.accumulate_grad(&dz[offset..offset + numel]);
                }
                offset += numel;
            }
        }
        Op::RepeatRows => {
            let x = &rec.inputs[0];
            if x.is_tracked() {
                let (m, d) = (out_shape[0], out_shape[1]);
                let mut dx = vec![0.0; d];
                for i in 0..m {
                    for j in 0..d {
                        dx[j] += dz[i * d + j];
                    }
                }
                x.accumulate_grad(&dx);
            }
        }
        Op::Softmax => {
            let x = &rec.inputs[0];
            if x.is_tracked() {
                let dx = rec.output.with_values(|y| {
                    let dot: f64 = dz.iter().zip(y).map(|(&d, &yi)| d * yi).sum();
                    y.iter().zip(dz).map(|(&yi, &d)| yi * (d - dot)).collect::<Vec<_>>()
                });
                x.accumulate_grad(&dx);
            }
        }
        Op::MeanRows => {
            let x = &rec.inputs[0];
            if x.is_tracked() {
                let (n, d) = (x.shape()[0], x.shape()[1]);
                let inv = 1.0 / n as f64;
                let mut dx = Vec::with_capacity(n * d);
                for _ in 0..n {
                    dx.extend(dz.iter().map(|&g| g * inv));
                }
                x.accumulate_grad(&dx);
            }
        }
        Op::CrossEntropy { gold, probs } => {
            let logits = &rec.inputs[0];
            if logits.is_tracked() {
                let d = dz[0];
                let mut dl: Vec<f64> = probs.iter().map(|&p| d * p).collect();
                dl[*gold] -= d;
                logits.accumulate_grad(&dl);
            }
        }
        Op::GatherRows { ids } => {
            let table = &rec.inputs[0];
            if table.is_tracked() {
                let (r, d) = (table.shape()[0], table.shape()[1]);
                let mut dt = vec![0.0; r * d];
                for (t, &id) in ids.iter().enumerate() {
                    for j in 0..d {
                        dt[id * d + j] += dz[t * d + j];
                    }
                }
                table.accumulate_grad(&dt);
            }
        }
        Op::Reshape => {
            let x = &rec.inputs[0];
            if x.is_tracked() {
                x.accumulate_grad(dz);
            }
        }
        Op::Sum => {
            let x = &rec.inputs[0];
            if x.is_tracked() {
                let dx = vec![dz[0]; x.numel()];
                x.accumulate_grad(&dx);
            }
        }
        Op::Scale { factor } => {
            let x = &rec.inputs[0];
            if x.is_tracked() {
                let dx: Vec<f64> = dz.iter().map(|&d| d * factor).collect();
                x.accumulate_grad(&dx);
            }
        }
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Max-subtracted softmax over a slice. The normalizer is summed in
/// sorted order, so permuting the input permutes the output bitwise.
pub(crate) fn softmax_slice(x: &[f64]) -> Vec<f64> {
    let max = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = x.iter().map(|&v| (v - max).exp()).collect();
    let mut ordered = exps.clone();
    ordered.sort_unstable_by(|a, b| a.partial_cmp(b).expect("finite"));
    let sum: f64 = ordered.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}
