//! Two-phase orchestration. Phase 1 learns subjectivity over all training
//! data; phase 2 learns polarity over the gold-subjective subset only. At
//! inference, tweets the first phase calls NEUTRAL become NONE without ever
//! touching phase 2; the rest get phase 2's FAVOR/AGAINST decision.
//!
//! The losses of the two phases are never combined: each phase owns a
//! disjoint parameter set and its own optimizer.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::corpus::{self, derive_phase1, CorpusError, EncodedExample, Example, Stance, Vocab};
use crate::model::{argmax, load_word_vectors, ModelConfig, ModelError, PhaseModel};
use crate::optim::{Optimizer, OptimizerKind};
use crate::tensor::{Tape, Tensor, TensorError};
use crate::textprep::Preprocessor;

/// Gradient-clip threshold applied when clipping is enabled.
pub const CLIP_NORM: f64 = 5.0;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid config: {0}")]
    BadConfig(String),
    #[error("empty training set{}", scope_suffix(.0))]
    EmptySet(Option<String>),
    #[error("degenerate training data{}: need both FAVOR and AGAINST examples", scope_suffix(.0))]
    DegenerateData(Option<String>),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

fn scope_suffix(scope: &Option<String>) -> String {
    match scope {
        Some(s) => format!(" for target '{s}'"),
        None => String::new(),
    }
}

/// Everything that controls a training run.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize, PartialEq)]
pub struct TrainConfig {
    pub optimizer: OptimizerKind,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Slang normalization + stopword removal on tweets.
    pub cleaning: bool,
    /// Target-conditioned attention; when false, mean pooling.
    pub attention: bool,
    /// Clip gradients to global L2 norm [`CLIP_NORM`].
    pub grad_clip: bool,
    /// Fraction of training data held out (seeded) for monitoring only.
    pub holdout_fraction: f64,
    /// One model per target (default) or a single pooled model.
    pub per_target: bool,
    pub embed_dim: usize,
    pub hidden: usize,
    pub init_scale: f64,
    /// Optional pretrained word-vector file, `token v1 .. vd` per line.
    pub embeddings_path: Option<String>,
    pub min_count: u64,
}

impl Default for TrainConfig {
    fn default() -> TrainConfig {
        TrainConfig {
            optimizer: OptimizerKind::Adam,
            learning_rate: 0.005,
            epochs: 30,
            batch_size: 32,
            seed: 7,
            cleaning: false,
            attention: true,
            grad_clip: false,
            holdout_fraction: 0.0,
            per_target: true,
            embed_dim: 100,
            hidden: 64,
            init_scale: 1.0,
            embeddings_path: None,
            min_count: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.epochs < 1 {
            return Err(TrainError::BadConfig("epochs must be at least 1".into()));
        }
        if self.batch_size < 1 {
            return Err(TrainError::BadConfig("batch size must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.holdout_fraction) {
            return Err(TrainError::BadConfig(
                "holdout fraction must be in [0, 1)".into(),
            ));
        }
        if !self.learning_rate.is_finite() || self.learning_rate <= 0.0 {
            return Err(TrainError::BadConfig("learning rate must be positive".into()));
        }
        if self.embed_dim == 0 || self.hidden == 0 {
            return Err(TrainError::BadConfig("model dimensions must be positive".into()));
        }
        Ok(())
    }

    pub fn preprocessor(&self) -> Preprocessor {
        Preprocessor::standard(self.cleaning)
    }

    fn model_config(&self, seed: u64) -> ModelConfig {
        ModelConfig {
            embed_dim: self.embed_dim,
            hidden: self.hidden,
            seed,
            init_scale: self.init_scale,
            attention: self.attention,
        }
    }
}

/// Loss trajectory of one phase's training run.
#[derive(Debug, Clone)]
pub struct TrainStats {
    /// Mean cross-entropy over the full set before any update.
    pub initial_loss: f64,
    /// Mean cross-entropy over the full set after the last epoch.
    pub final_loss: f64,
    /// Mean per-example loss of each epoch's mini-batches.
    pub epoch_losses: Vec<f64>,
}

/// Both phases plus the shared vocabulary they were trained against.
#[derive(Clone)]
pub struct TwoPhaseModel {
    pub phase1: PhaseModel,
    pub phase2: PhaseModel,
    pub vocab: Vocab,
    pub config: TrainConfig,
}

impl TwoPhaseModel {
    /// Route one encoded example through the cascade. Phase 2 runs only
    /// when phase 1 calls the tweet subjective; argmax ties break toward
    /// index 0 (SUBJECTIVE, then FAVOR).
    pub fn predict_encoded(&self, encoded: &EncodedExample) -> Result<Stance, TensorError> {
        self.predict_ids(&encoded.tweet_ids, &encoded.target_ids)
    }

    pub fn predict_ids(&self, tweet_ids: &[usize], target_ids: &[usize]) -> Result<Stance, TensorError> {
        let mut tape = Tape::new();
        let out1 = self.phase1.forward(&mut tape, tweet_ids, target_ids)?;
        let subjective = argmax(&out1.probs.values()) == 0;
        if !subjective {
            return Ok(Stance::None);
        }
        let mut tape2 = Tape::new();
        let out2 = self.phase2.forward(&mut tape2, tweet_ids, target_ids)?;
        Ok(if argmax(&out2.probs.values()) == 0 {
            Stance::Favor
        } else {
            Stance::Against
        })
    }
}

/// A trained stance model: per-target map or one pooled model.
#[derive(Clone)]
pub enum TrainedModel {
    PerTarget(BTreeMap<String, TwoPhaseModel>),
    Pooled(TwoPhaseModel),
}

impl TrainedModel {
    pub fn config(&self) -> &TrainConfig {
        match self {
            TrainedModel::PerTarget(map) => {
                &map.values().next().expect("per-target model is never empty").config
            }
            TrainedModel::Pooled(m) => &m.config,
        }
    }

    pub fn vocab(&self) -> &Vocab {
        match self {
            TrainedModel::PerTarget(map) => {
                &map.values().next().expect("per-target model is never empty").vocab
            }
            TrainedModel::Pooled(m) => &m.vocab,
        }
    }

    fn model_for(&self, target: &str) -> Result<&TwoPhaseModel, TrainError> {
        match self {
            TrainedModel::Pooled(m) => Ok(m),
            TrainedModel::PerTarget(map) => map.get(target).ok_or_else(|| {
                TrainError::Corpus(CorpusError::UnknownTarget {
                    target: target.to_string(),
                    valid: map.keys().cloned().collect(),
                })
            }),
        }
    }

    /// Predict the stance of a raw example, using the model trained for
    /// its target (or the pooled model).
    pub fn predict(&self, example: &Example, prep: &Preprocessor) -> Result<Stance, TrainError> {
        let two = self.model_for(&example.target)?;
        let encoded = corpus::encode(example, &two.vocab, prep)?;
        Ok(two.predict_encoded(&encoded)?)
    }
}

/// Outcome of a full training run.
pub struct TrainOutcome {
    pub model: TrainedModel,
    /// (scope, phase-1 stats, phase-2 stats) per trained model; scope is a
    /// target name or "pooled".
    pub stats: Vec<(String, TrainStats, TrainStats)>,
    /// Three-class accuracy over the held-out split, when one was taken.
    pub holdout_accuracy: Option<f64>,
}

#[derive(Clone, Copy)]
enum Phase {
    Subjectivity,
    Polarity,
}

impl Phase {
    fn label(self, ex: &EncodedExample) -> usize {
        match self {
            Phase::Subjectivity => derive_phase1(ex.stance).index(),
            // phase-2 head: FAVOR 0, AGAINST 1
            Phase::Polarity => match ex.stance {
                Stance::Favor => 0,
                Stance::Against => 1,
                Stance::None => unreachable!("phase 2 never sees NONE"),
            },
        }
    }
}

fn mean_loss(model: &PhaseModel, examples: &[&EncodedExample], phase: Phase) -> Result<f64, TensorError> {
    let mut total = 0.0;
    for ex in examples {
        let mut tape = Tape::new();
        let out = model.forward(&mut tape, &ex.tweet_ids, &ex.target_ids)?;
        let loss = tape.cross_entropy(&out.logits, phase.label(ex))?;
        total += loss.scalar_value();
    }
    Ok(total / examples.len() as f64)
}

/// Train one phase from an initialized model: shuffled mini-batches of
/// mean cross-entropy for `cfg.epochs` epochs. The caller seeds the RNG
/// stream so different phases and targets decorrelate under one run seed.
fn train_phase_from(
    model: PhaseModel,
    examples: &[&EncodedExample],
    cfg: &TrainConfig,
    phase: Phase,
    rng: &mut ChaCha8Rng,
    scope: &Option<String>,
) -> Result<(PhaseModel, TrainStats), TrainError> {
    if examples.is_empty() {
        return Err(TrainError::EmptySet(scope.clone()));
    }
    let params = model.params();
    let mut opt = Optimizer::new(cfg.optimizer, cfg.learning_rate);
    if cfg.grad_clip {
        opt = opt.with_clip_norm(CLIP_NORM);
    }

    let initial_loss = mean_loss(&model, examples, phase)?;
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    for _ in 0..cfg.epochs {
        order.shuffle(rng);
        let mut epoch_total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let mut tape = Tape::new();
            let mut batch_loss: Option<Tensor> = None;
            for &idx in batch {
                let ex = examples[idx];
                let out = model.forward(&mut tape, &ex.tweet_ids, &ex.target_ids)?;
                let loss = tape.cross_entropy(&out.logits, phase.label(ex))?;
                batch_loss = Some(match batch_loss {
                    Some(acc) => tape.add(&acc, &loss)?,
                    None => loss,
                });
            }
            let total = batch_loss.expect("chunks are nonempty");
            let mean = tape.scale(&total, 1.0 / batch.len() as f64)?;
            tape.backward(&mean)?;
            opt.step(&params)?;
            epoch_total += mean.scalar_value() * batch.len() as f64;
        }
        epoch_losses.push(epoch_total / examples.len() as f64);
    }
    let final_loss = mean_loss(&model, examples, phase)?;
    Ok((
        model,
        TrainStats {
            initial_loss,
            final_loss,
            epoch_losses,
        },
    ))
}

/// Train the subjectivity phase on every example.
pub fn train_phase1(
    examples: &[EncodedExample],
    vocab_size: usize,
    cfg: &TrainConfig,
) -> Result<(PhaseModel, TrainStats), TrainError> {
    let refs: Vec<&EncodedExample> = examples.iter().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let model = PhaseModel::init(&cfg.model_config(cfg.seed.wrapping_add(1)), vocab_size);
    train_phase_from(model, &refs, cfg, Phase::Subjectivity, &mut rng, &None)
}

/// Train the polarity phase. NONE examples are excluded here; training
/// requires at least one FAVOR and one AGAINST example.
pub fn train_phase2(
    examples: &[EncodedExample],
    vocab_size: usize,
    cfg: &TrainConfig,
) -> Result<(PhaseModel, TrainStats), TrainError> {
    let subjective: Vec<&EncodedExample> =
        examples.iter().filter(|e| e.stance != Stance::None).collect();
    check_polarity_labels(&subjective, &None)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(2);
    let model = PhaseModel::init(&cfg.model_config(cfg.seed.wrapping_add(2)), vocab_size);
    train_phase_from(model, &subjective, cfg, Phase::Polarity, &mut rng, &None)
}

fn check_polarity_labels(
    subjective: &[&EncodedExample],
    scope: &Option<String>,
) -> Result<(), TrainError> {
    let has_favor = subjective.iter().any(|e| e.stance == Stance::Favor);
    let has_against = subjective.iter().any(|e| e.stance == Stance::Against);
    if !has_favor || !has_against {
        return Err(TrainError::DegenerateData(scope.clone()));
    }
    Ok(())
}

fn train_two_phase(
    encoded: &[EncodedExample],
    vocab: &Vocab,
    cfg: &TrainConfig,
    salt_base: u64,
    scope: &Option<String>,
    pretrained: Option<&std::collections::HashMap<String, Vec<f64>>>,
    log: &mut dyn FnMut(&str),
) -> Result<(TwoPhaseModel, TrainStats, TrainStats), TrainError> {
    if encoded.is_empty() {
        return Err(TrainError::EmptySet(scope.clone()));
    }
    let all: Vec<&EncodedExample> = encoded.iter().collect();
    let subjective: Vec<&EncodedExample> =
        encoded.iter().filter(|e| e.stance != Stance::None).collect();
    check_polarity_labels(&subjective, scope)?;
    let scope_name = scope.as_deref().unwrap_or("pooled");

    let init_phase = |salt: u64| -> Result<PhaseModel, TrainError> {
        let model = PhaseModel::init(&cfg.model_config(cfg.seed.wrapping_add(salt)), vocab.size());
        if let Some(vectors) = pretrained {
            model.apply_pretrained(vocab, vectors)?;
        }
        Ok(model)
    };

    let mut rng1 = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng1.set_stream(salt_base);
    let (phase1, stats1) = train_phase_from(
        init_phase(salt_base)?,
        &all,
        cfg,
        Phase::Subjectivity,
        &mut rng1,
        scope,
    )?;
    log(&format!(
        "{scope_name}: phase 1 ({} examples) loss {:.4} -> {:.4}",
        all.len(),
        stats1.initial_loss,
        stats1.final_loss
    ));

    let mut rng2 = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng2.set_stream(salt_base + 1);
    let (phase2, stats2) = train_phase_from(
        init_phase(salt_base + 1)?,
        &subjective,
        cfg,
        Phase::Polarity,
        &mut rng2,
        scope,
    )?;
    log(&format!(
        "{scope_name}: phase 2 ({} examples) loss {:.4} -> {:.4}",
        subjective.len(),
        stats2.initial_loss,
        stats2.final_loss
    ));

    Ok((
        TwoPhaseModel {
            phase1,
            phase2,
            vocab: vocab.clone(),
            config: cfg.clone(),
        },
        stats1,
        stats2,
    ))
}

/// Full training entry point: optional seeded holdout, shared vocabulary
/// over the retained training split, then per-target models (default) or
/// one pooled model.
pub fn train_all(examples: &[Example], cfg: &TrainConfig) -> Result<TrainOutcome, TrainError> {
    train_all_with(examples, cfg, |_| {})
}

/// [`train_all`] with a progress sink; `log` receives one line per
/// completed phase.
pub fn train_all_with<F: FnMut(&str)>(
    examples: &[Example],
    cfg: &TrainConfig,
    mut log: F,
) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    if examples.is_empty() {
        return Err(TrainError::EmptySet(None));
    }
    let prep = cfg.preprocessor();

    let mut retained: Vec<Example> = examples.to_vec();
    let mut heldout: Vec<Example> = Vec::new();
    if cfg.holdout_fraction > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(u64::MAX); // holdout stream, disjoint from training salts
        let mut order: Vec<usize> = (0..retained.len()).collect();
        order.shuffle(&mut rng);
        let n_held = ((retained.len() as f64) * cfg.holdout_fraction).floor() as usize;
        let held_set: std::collections::HashSet<usize> = order[..n_held].iter().copied().collect();
        let mut kept = Vec::with_capacity(retained.len() - n_held);
        for (i, ex) in retained.into_iter().enumerate() {
            if held_set.contains(&i) {
                heldout.push(ex);
            } else {
                kept.push(ex);
            }
        }
        retained = kept;
        if retained.is_empty() {
            return Err(TrainError::BadConfig("holdout removed every example".into()));
        }
    }

    let vocab = corpus::build_vocab(&retained, cfg.min_count, &prep)?;
    let pretrained = match &cfg.embeddings_path {
        Some(path) => Some(load_word_vectors(std::path::Path::new(path), cfg.embed_dim)?),
        None => None,
    };

    let mut stats = Vec::new();
    let model = if cfg.per_target {
        let mut groups: BTreeMap<String, Vec<EncodedExample>> = BTreeMap::new();
        for ex in &retained {
            groups
                .entry(ex.target.clone())
                .or_default()
                .push(corpus::encode(ex, &vocab, &prep)?);
        }
        let mut map = BTreeMap::new();
        for (i, (target, encoded)) in groups.iter().enumerate() {
            let scope = Some(target.clone());
            // two salts per target: phase 1 and phase 2
            let salt_base = 1 + 2 * i as u64;
            let (two, s1, s2) = train_two_phase(
                encoded,
                &vocab,
                cfg,
                salt_base,
                &scope,
                pretrained.as_ref(),
                &mut log,
            )?;
            stats.push((target.clone(), s1, s2));
            map.insert(target.clone(), two);
        }
        TrainedModel::PerTarget(map)
    } else {
        let encoded: Vec<EncodedExample> = retained
            .iter()
            .map(|ex| corpus::encode(ex, &vocab, &prep))
            .collect::<Result<_, _>>()?;
        let (two, s1, s2) =
            train_two_phase(&encoded, &vocab, cfg, 1, &None, pretrained.as_ref(), &mut log)?;
        stats.push(("pooled".to_string(), s1, s2));
        TrainedModel::Pooled(two)
    };

    let holdout_accuracy = if heldout.is_empty() {
        None
    } else {
        let mut correct = 0usize;
        let mut counted = 0usize;
        for ex in &heldout {
            if let Ok(pred) = model.predict(ex, &prep) {
                counted += 1;
                if pred == ex.stance {
                    correct += 1;
                }
            }
        }
        (counted > 0).then(|| correct as f64 / counted as f64)
    };

    Ok(TrainOutcome {
        model,
        stats,
        holdout_accuracy,
    })
}
