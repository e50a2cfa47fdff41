//! Python bindings: the corpus types, the train/predict/evaluate loop,
//! and the gradient-check suite, importable as the `tpan` module.
//!
//! Build with `cargo build -p tpan-py --release`, then import the produced
//! `libtpan.so` as `tpan.so` (see `python/smoke_test.py`).

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use tpan_core::checkpoint;
use tpan_core::corpus::{self, Stance};
use tpan_core::eval;
use tpan_core::gradcheck;
use tpan_core::optim::OptimizerKind;
use tpan_core::pipeline::{train_all, TrainConfig, TrainedModel};
use tpan_core::textprep::{self, Preprocessor};

fn value_err<E: std::fmt::Display>(e: E) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn parse_stance(s: &str) -> PyResult<Stance> {
    Stance::parse(s).ok_or_else(|| {
        PyValueError::new_err(format!("unknown stance '{s}', expected FAVOR/AGAINST/NONE"))
    })
}

/// One labeled instance: target topic, tweet text, and gold stance.
#[pyclass(module = "tpan", from_py_object)]
#[derive(Clone)]
struct Example {
    #[pyo3(get)]
    id: String,
    #[pyo3(get)]
    target: String,
    #[pyo3(get)]
    tweet: String,
    #[pyo3(get)]
    stance: String,
}

#[pymethods]
impl Example {
    #[new]
    fn new(id: String, target: String, tweet: String, stance: String) -> PyResult<Example> {
        parse_stance(&stance)?;
        Ok(Example {
            id,
            target,
            tweet,
            stance: stance.to_uppercase(),
        })
    }

    fn __repr__(&self) -> String {
        format!(
            "Example(id={:?}, target={:?}, tweet={:?}, stance={:?})",
            self.id, self.target, self.tweet, self.stance
        )
    }
}

impl Example {
    fn to_core(&self) -> PyResult<corpus::Example> {
        Ok(corpus::Example {
            id: self.id.clone(),
            target: self.target.clone(),
            tweet: self.tweet.clone(),
            stance: parse_stance(&self.stance)?,
        })
    }

    fn from_core(ex: &corpus::Example) -> Example {
        Example {
            id: ex.id.clone(),
            target: ex.target.clone(),
            tweet: ex.tweet.clone(),
            stance: ex.stance.as_str().to_string(),
        }
    }
}

/// Lowercasing tweet tokenizer with URL and @mention placeholders.
#[pyfunction]
fn tokenize(text: &str) -> Vec<String> {
    textprep::tokenize(text)
}

/// Tokenize plus (optionally) slang normalization and stopword removal
/// using the bundled resources.
#[pyfunction]
#[pyo3(signature = (text, cleaning = true))]
fn clean(text: &str, cleaning: bool) -> Vec<String> {
    Preprocessor::standard(cleaning).clean(text)
}

/// Load a task TSV (ID/Target/Tweet/Stance with a header row).
#[pyfunction]
fn load_semeval(path: &str) -> PyResult<Vec<Example>> {
    let examples = corpus::load_semeval(std::path::Path::new(path)).map_err(value_err)?;
    Ok(examples.iter().map(Example::from_core).collect())
}

/// A trained two-phase stance model.
#[pyclass(module = "tpan", unsendable)]
struct StanceModel {
    model: TrainedModel,
    prep: Preprocessor,
}

#[pymethods]
impl StanceModel {
    /// Train from labeled examples. `optimizer` is "adam" or "sgd";
    /// `per_target` trains one model per target (the default) instead of
    /// one pooled model.
    #[staticmethod]
    #[pyo3(signature = (
        examples,
        *,
        epochs = 30,
        learning_rate = 0.005,
        batch_size = 32,
        seed = 7,
        optimizer = "adam",
        clean = false,
        attention = true,
        per_target = true,
        grad_clip = false,
        embed_dim = 100,
        hidden = 64,
        holdout_fraction = 0.0,
        embeddings_path = None
    ))]
    #[allow(clippy::too_many_arguments)]
    fn train(
        examples: Vec<Example>,
        epochs: usize,
        learning_rate: f64,
        batch_size: usize,
        seed: u64,
        optimizer: &str,
        clean: bool,
        attention: bool,
        per_target: bool,
        grad_clip: bool,
        embed_dim: usize,
        hidden: usize,
        holdout_fraction: f64,
        embeddings_path: Option<String>,
    ) -> PyResult<StanceModel> {
        let optimizer = match optimizer.to_ascii_lowercase().as_str() {
            "adam" => OptimizerKind::Adam,
            "sgd" => OptimizerKind::Sgd,
            other => return Err(PyValueError::new_err(format!("unknown optimizer '{other}'"))),
        };
        let cfg = TrainConfig {
            optimizer,
            learning_rate,
            epochs,
            batch_size,
            seed,
            cleaning: clean,
            attention,
            grad_clip,
            holdout_fraction,
            per_target,
            embed_dim,
            hidden,
            embeddings_path,
            ..TrainConfig::default()
        };
        let core: Vec<corpus::Example> = examples
            .iter()
            .map(|e| e.to_core())
            .collect::<PyResult<_>>()?;
        let outcome = train_all(&core, &cfg).map_err(value_err)?;
        Ok(StanceModel {
            prep: cfg.preprocessor(),
            model: outcome.model,
        })
    }

    /// Predict the stance ("FAVOR"/"AGAINST"/"NONE") of one tweet toward
    /// a target.
    fn predict(&self, target: &str, tweet: &str) -> PyResult<String> {
        let ex = corpus::Example {
            id: String::new(),
            target: target.to_string(),
            tweet: tweet.to_string(),
            stance: Stance::None,
        };
        let stance = self.model.predict(&ex, &self.prep).map_err(value_err)?;
        Ok(stance.as_str().to_string())
    }

    /// Predict stances for a list of examples, in order.
    fn predict_many(&self, examples: Vec<Example>) -> PyResult<Vec<String>> {
        examples
            .iter()
            .map(|e| {
                let core = e.to_core()?;
                let stance = self.model.predict(&core, &self.prep).map_err(value_err)?;
                Ok(stance.as_str().to_string())
            })
            .collect()
    }

    /// Targets this model was trained for ("pooled" models accept any).
    fn targets(&self) -> Vec<String> {
        match &self.model {
            TrainedModel::PerTarget(map) => map.keys().cloned().collect(),
            TrainedModel::Pooled(_) => vec![],
        }
    }

    /// Write a checkpoint directory.
    fn save(&self, path: &str) -> PyResult<()> {
        checkpoint::save(&self.model, std::path::Path::new(path)).map_err(value_err)
    }

    /// Load a checkpoint directory written by `save`.
    #[staticmethod]
    fn load(path: &str) -> PyResult<StanceModel> {
        let model = checkpoint::load(std::path::Path::new(path)).map_err(value_err)?;
        let prep = model.config().preprocessor();
        Ok(StanceModel { model, prep })
    }

    fn __repr__(&self) -> String {
        match &self.model {
            TrainedModel::PerTarget(map) => {
                format!("StanceModel(per_target, targets={:?})", map.keys().collect::<Vec<_>>())
            }
            TrainedModel::Pooled(_) => "StanceModel(pooled)".to_string(),
        }
    }
}

/// Score predictions against gold labels. Both are stance-string lists;
/// `targets` enables the per-target breakdown. Returns a dict with
/// per-class precision/recall/F1, `macro_f_fa`, and `accuracy3`.
#[pyfunction]
#[pyo3(signature = (gold, pred, targets = None))]
fn evaluate<'py>(
    py: Python<'py>,
    gold: Vec<String>,
    pred: Vec<String>,
    targets: Option<Vec<String>>,
) -> PyResult<Bound<'py, PyDict>> {
    let gold: Vec<Stance> = gold.iter().map(|s| parse_stance(s)).collect::<PyResult<_>>()?;
    let pred: Vec<Stance> = pred.iter().map(|s| parse_stance(s)).collect::<PyResult<_>>()?;
    let targets = targets.unwrap_or_else(|| vec!["all".to_string(); gold.len()]);
    let rep = eval::report(&gold, &pred, &targets).map_err(value_err)?;

    fn fill<'a>(py: Python<'a>, rep: &eval::EvalReport) -> PyResult<Bound<'a, PyDict>> {
        let d = PyDict::new(py);
        for (i, stance) in Stance::ALL.iter().enumerate() {
            let class = stance.as_str().to_lowercase();
            d.set_item(format!("precision_{class}"), rep.per_class[i].precision)?;
            d.set_item(format!("recall_{class}"), rep.per_class[i].recall)?;
            d.set_item(format!("f1_{class}"), rep.per_class[i].f1)?;
        }
        d.set_item("macro_f_fa", rep.macro_f_fa)?;
        d.set_item("accuracy3", rep.accuracy3)?;
        d.set_item("count", rep.total)?;
        Ok(d)
    }

    let out = fill(py, &rep)?;
    if rep.per_target.len() > 1 {
        let per_target = PyDict::new(py);
        for (target, sub) in &rep.per_target {
            per_target.set_item(target, fill(py, sub)?)?;
        }
        out.set_item("per_target", per_target)?;
    }
    Ok(out)
}

/// Run the finite-difference gradient suite; returns the worst relative
/// error observed, raising `RuntimeError` if any check fails.
#[pyfunction]
#[pyo3(signature = (seed = 0))]
fn gradcheck_suite(seed: u64) -> PyResult<f64> {
    let outcomes = gradcheck::run_suite(seed).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    let worst = outcomes.iter().map(|o| o.max_rel_err).fold(0.0, f64::max);
    if let Some(failed) = outcomes.iter().find(|o| !o.passed) {
        return Err(PyRuntimeError::new_err(format!(
            "gradient check {} failed with relative error {:.3e}",
            failed.name, failed.max_rel_err
        )));
    }
    Ok(worst)
}

#[pymodule]
fn tpan(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Example>()?;
    m.add_class::<StanceModel>()?;
    m.add_function(wrap_pyfunction!(tokenize, m)?)?;
    m.add_function(wrap_pyfunction!(clean, m)?)?;
    m.add_function(wrap_pyfunction!(load_semeval, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(gradcheck_suite, m)?)?;
    m.add("URL_TOKEN", textprep::URL_TOKEN)?;
    m.add("USER_TOKEN", textprep::USER_TOKEN)?;
    Ok(())
}
