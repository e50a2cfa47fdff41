//! One phase's network: embedding lookup, target-average query,
//! bi-directional LSTM encoder, target-augmented attention, and a 2-class
//! softmax head.
//!
//! The dataflow has two parallel branches over the word embeddings. Branch
//! A encodes the raw embeddings with the bi-LSTM. Branch B appends the mean
//! target embedding to every word, scores each augmented word with a linear
//! layer, and softmax-normalizes the scores into attention weights. The
//! weighted sum of encoder rows feeds the classifier. With attention
//! disabled the encoder rows are mean-pooled instead.

use std::collections::HashMap;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::corpus::Vocab;
use crate::tensor::{Tape, Tensor, TensorError};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("embedding file line {line}: {reason}")]
    BadVector { line: usize, reason: String },
    #[error("embedding dimension {found} does not match model dimension {expected}")]
    DimMismatch { expected: usize, found: usize },
}

/// Dimensions and initialization settings for one phase model. The target
/// query shares the word embedding table, so its dimension always equals
/// `embed_dim`.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize, PartialEq)]
pub struct ModelConfig {
    /// Word embedding dimension d_z.
    pub embed_dim: usize,
    /// LSTM hidden size per direction.
    pub hidden: usize,
    pub seed: u64,
    /// Multiplier on the uniform Xavier bound √(6/(fan_in+fan_out)).
    pub init_scale: f64,
    /// When false, attention is replaced by mean pooling over encoder rows.
    pub attention: bool,
}

impl Default for ModelConfig {
    fn default() -> ModelConfig {
        ModelConfig {
            embed_dim: 100,
            hidden: 64,
            seed: 0,
            init_scale: 1.0,
            attention: true,
        }
    }
}

impl ModelConfig {
    /// Dimension of the mean target embedding (same table as words).
    pub fn target_dim(&self) -> usize {
        self.embed_dim
    }
}

/// One direction's LSTM parameters. Gate layout along the 4h axis is
/// [input, forget, candidate, output].
#[derive(Debug, Clone)]
pub struct LstmParams {
    pub w_input: Tensor,
    pub w_recur: Tensor,
    pub bias: Tensor,
}

impl LstmParams {
    fn init(rng: &mut ChaCha8Rng, input_dim: usize, hidden: usize, scale: f64) -> LstmParams {
        let w_input = xavier(rng, input_dim, 4 * hidden, scale);
        let w_recur = xavier(rng, hidden, 4 * hidden, scale);
        let mut bias = vec![0.0; 4 * hidden];
        // forget-gate slice starts open
        for b in bias.iter_mut().take(2 * hidden).skip(hidden) {
            *b = 1.0;
        }
        LstmParams {
            w_input,
            w_recur,
            bias: Tensor::param(&[4 * hidden], bias).expect("lstm bias"),
        }
    }
}

fn xavier(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Tensor {
    let r = scale * (6.0 / (rows + cols) as f64).sqrt();
    let values: Vec<f64> = (0..rows * cols).map(|_| rng.random_range(-r..r)).collect();
    Tensor::param(&[rows, cols], values).expect("xavier init")
}

/// Parameter bundle for one phase: embedding table, both LSTM directions,
/// attention linear layer, and the 2-class classifier head.
#[derive(Debug, Clone)]
pub struct PhaseModel {
    pub config: ModelConfig,
    /// |V| × embed_dim.
    pub embedding: Tensor,
    pub forward_lstm: LstmParams,
    pub backward_lstm: LstmParams,
    /// (2·embed_dim) × 1.
    pub attn_weight: Tensor,
    /// [1].
    pub attn_bias: Tensor,
    /// (2·hidden) × 2.
    pub class_weight: Tensor,
    /// [2].
    pub class_bias: Tensor,
}

/// Result of one forward pass.
pub struct ForwardOutput {
    /// Pre-softmax class scores, shape [2]; feed these to cross-entropy.
    pub logits: Tensor,
    /// Class probabilities, shape [2].
    pub probs: Tensor,
    /// Per-word attention weights, shape [m]; uniform when attention is
    /// disabled.
    pub attention: Tensor,
}

impl PhaseModel {
    /// Deterministic initialization: uniform Xavier weights drawn from a
    /// seeded stream, zero biases except the forget-gate slice at 1.
    pub fn init(config: &ModelConfig, vocab_size: usize) -> PhaseModel {
        assert!(config.embed_dim > 0 && config.hidden > 0, "bad model config");
        assert!(vocab_size >= 2, "vocabulary must contain at least the reserved entries");
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let d = config.embed_dim;
        let h = config.hidden;
        let embedding = xavier(&mut rng, vocab_size, d, config.init_scale);
        let forward_lstm = LstmParams::init(&mut rng, d, h, config.init_scale);
        let backward_lstm = LstmParams::init(&mut rng, d, h, config.init_scale);
        let attn_weight = xavier(&mut rng, d + config.target_dim(), 1, config.init_scale);
        let class_weight = xavier(&mut rng, 2 * h, 2, config.init_scale);
        PhaseModel {
            config: config.clone(),
            embedding,
            forward_lstm,
            backward_lstm,
            attn_weight,
            attn_bias: Tensor::param(&[1], vec![0.0]).expect("attn bias"),
            class_weight,
            class_bias: Tensor::param(&[2], vec![0.0; 2]).expect("class bias"),
        }
    }

    pub fn vocab_size(&self) -> usize {
        self.embedding.shape()[0]
    }

    /// The tensors the optimizer updates. With attention disabled the
    /// attention layer never enters the forward pass, so its parameters
    /// are excluded here (they stay in the model and its checkpoints).
    pub fn params(&self) -> Vec<Tensor> {
        self.named_params()
            .into_iter()
            .filter(|(name, _)| self.config.attention || !name.starts_with("attn."))
            .map(|(_, t)| t)
            .collect()
    }

    /// Every parameter tensor in checkpoint order.
    pub fn named_params(&self) -> Vec<(&'static str, Tensor)> {
        vec![
            ("embedding", self.embedding.clone()),
            ("fwd.w_input", self.forward_lstm.w_input.clone()),
            ("fwd.w_recur", self.forward_lstm.w_recur.clone()),
            ("fwd.bias", self.forward_lstm.bias.clone()),
            ("bwd.w_input", self.backward_lstm.w_input.clone()),
            ("bwd.w_recur", self.backward_lstm.w_recur.clone()),
            ("bwd.bias", self.backward_lstm.bias.clone()),
            ("attn.weight", self.attn_weight.clone()),
            ("attn.bias", self.attn_bias.clone()),
            ("clf.weight", self.class_weight.clone()),
            ("clf.bias", self.class_bias.clone()),
        ]
    }

    /// Mean embedding of the target words. Ids are sorted before gathering
    /// so any ordering of the same words sums in one canonical order and
    /// the result is bit-identical under permutation.
    pub fn target_query(&self, tape: &mut Tape, target_ids: &[usize]) -> Result<Tensor, TensorError> {
        if target_ids.is_empty() {
            return Err(TensorError::Contract(
                "target_query requires at least one target token".into(),
            ));
        }
        let mut sorted = target_ids.to_vec();
        sorted.sort_unstable();
        let rows = tape.gather_rows(&self.embedding, &sorted)?;
        tape.mean_rows(&rows)
    }

    /// Append the query to every word embedding row: `[z_t ‖ z̃]`.
    pub fn augment(
        &self,
        tape: &mut Tape,
        word_embeds: &Tensor,
        query: &Tensor,
    ) -> Result<Tensor, TensorError> {
        let m = word_embeds.shape()[0];
        let tiled = tape.repeat_rows(query, m)?;
        tape.concat_rows(word_embeds, &tiled)
    }

    /// Run both LSTM directions over the raw word embeddings; output row t
    /// is the forward state at t concatenated with the backward state at t.
    pub fn bilstm_encode(&self, tape: &mut Tape, word_embeds: &Tensor) -> Result<Tensor, TensorError> {
        let fwd = self.lstm_direction(tape, word_embeds, &self.forward_lstm, false)?;
        let bwd = self.lstm_direction(tape, word_embeds, &self.backward_lstm, true)?;
        tape.concat_rows(&fwd, &bwd)
    }

    fn lstm_direction(
        &self,
        tape: &mut Tape,
        word_embeds: &Tensor,
        params: &LstmParams,
        reverse: bool,
    ) -> Result<Tensor, TensorError> {
        let m = word_embeds.shape()[0];
        let h = self.config.hidden;
        let mut h_state = Tensor::zeros(&[1, h]);
        let mut c_state = Tensor::zeros(&[1, h]);
        let mut states: Vec<Tensor> = Vec::with_capacity(m);
        let steps: Vec<usize> = if reverse { (0..m).rev().collect() } else { (0..m).collect() };
        for t in steps {
            let x_t = tape.slice_rows(word_embeds, t, 1)?;
            let ih = tape.matmul(&x_t, &params.w_input)?;
            let hh = tape.matmul(&h_state, &params.w_recur)?;
            let pre = tape.add(&ih, &hh)?;
            let gates = tape.add_row_bias(&pre, &params.bias)?;
            let i_pre = tape.slice_cols(&gates, 0, h)?;
            let f_pre = tape.slice_cols(&gates, h, h)?;
            let g_pre = tape.slice_cols(&gates, 2 * h, h)?;
            let o_pre = tape.slice_cols(&gates, 3 * h, h)?;
            let i_gate = tape.sigmoid(&i_pre);
            let f_gate = tape.sigmoid(&f_pre);
            let g_cand = tape.tanh(&g_pre);
            let o_gate = tape.sigmoid(&o_pre);
            let keep = tape.mul(&f_gate, &c_state)?;
            let write = tape.mul(&i_gate, &g_cand)?;
            c_state = tape.add(&keep, &write)?;
            let c_act = tape.tanh(&c_state);
            h_state = tape.mul(&o_gate, &c_act)?;
            states.push(h_state.clone());
        }
        if reverse {
            states.reverse();
        }
        tape.stack_rows(&states)
    }

    /// Score each augmented word with the linear layer and softmax the
    /// scores into weights over the m words.
    pub fn attention_weights(&self, tape: &mut Tape, augmented: &Tensor) -> Result<Tensor, TensorError> {
        let m = augmented.shape()[0];
        let scores = tape.matmul(augmented, &self.attn_weight)?;
        let biased = tape.add_row_bias(&scores, &self.attn_bias)?;
        let flat = tape.reshape(&biased, &[m])?;
        tape.softmax(&flat)
    }

    /// Attention-weighted sum of encoder rows: `s = Σ_t w_t · e_t`.
    pub fn attend(&self, tape: &mut Tape, encoded: &Tensor, weights: &Tensor) -> Result<Tensor, TensorError> {
        let m = encoded.shape()[0];
        let wn = weights.shape();
        if wn != vec![m] {
            return Err(TensorError::ShapeMismatch {
                op: "attend",
                lhs: encoded.shape(),
                rhs: wn,
            });
        }
        let row = tape.reshape(weights, &[1, m])?;
        let pooled = tape.matmul(&row, encoded)?;
        tape.reshape(&pooled, &[2 * self.config.hidden])
    }

    /// Pre-softmax class scores of the pooled sentence vector.
    pub fn classify_logits(&self, tape: &mut Tape, sentence: &Tensor) -> Result<Tensor, TensorError> {
        let dim = sentence.shape()[0];
        let row = tape.reshape(sentence, &[1, dim])?;
        let z = tape.matmul(&row, &self.class_weight)?;
        let zb = tape.add_row_bias(&z, &self.class_bias)?;
        tape.reshape(&zb, &[2])
    }

    /// Class probabilities `softmax(s·W_c + b_c)`. Index 0 is
    /// SUBJECTIVE/FAVOR, index 1 is NEUTRAL/AGAINST, depending on phase.
    pub fn classify(&self, tape: &mut Tape, sentence: &Tensor) -> Result<Tensor, TensorError> {
        let logits = self.classify_logits(tape, sentence)?;
        tape.softmax(&logits)
    }

    /// Full per-example forward pass over token ids.
    pub fn forward(
        &self,
        tape: &mut Tape,
        tweet_ids: &[usize],
        target_ids: &[usize],
    ) -> Result<ForwardOutput, TensorError> {
        if tweet_ids.is_empty() {
            return Err(TensorError::Contract("forward requires a nonempty tweet".into()));
        }
        let m = tweet_ids.len();
        let word_embeds = tape.gather_rows(&self.embedding, tweet_ids)?;
        let encoded = self.bilstm_encode(tape, &word_embeds)?;
        let (sentence, attention) = if self.config.attention {
            let query = self.target_query(tape, target_ids)?;
            let augmented = self.augment(tape, &word_embeds, &query)?;
            let weights = self.attention_weights(tape, &augmented)?;
            let pooled = self.attend(tape, &encoded, &weights)?;
            (pooled, weights)
        } else {
            let pooled = tape.mean_rows(&encoded)?;
            let uniform = Tensor::new(&[m], vec![1.0 / m as f64; m])?;
            (pooled, uniform)
        };
        let logits = self.classify_logits(tape, &sentence)?;
        let probs = tape.softmax(&logits)?;
        Ok(ForwardOutput {
            logits,
            probs,
            attention,
        })
    }

    /// Overwrite embedding rows for vocabulary tokens present in a
    /// pretrained vector map. Returns how many rows were seeded.
    pub fn apply_pretrained(
        &self,
        vocab: &Vocab,
        vectors: &HashMap<String, Vec<f64>>,
    ) -> Result<usize, ModelError> {
        let d = self.config.embed_dim;
        let mut seeded = 0;
        self.embedding.update_values(|table| {
            for (token, vec) in vectors {
                if vec.len() != d {
                    continue; // dimension validated at load
                }
                if vocab.contains(token) {
                    let id = vocab.id(token);
                    table[id * d..(id + 1) * d].copy_from_slice(vec);
                    seeded += 1;
                }
            }
        });
        Ok(seeded)
    }
}

/// Index of the largest value; ties break toward the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Load pretrained word vectors in text format: `token v1 v2 ... vd` per
/// line. A leading word2vec-style `count dim` header line is skipped.
pub fn load_word_vectors(
    path: &Path,
    expected_dim: usize,
) -> Result<HashMap<String, Vec<f64>>, ModelError> {
    let text = std::fs::read_to_string(path).map_err(|source| ModelError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut out = HashMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if i == 0 && fields.len() == 2 && fields.iter().all(|f| f.parse::<usize>().is_ok()) {
            continue; // header
        }
        if fields.len() < 2 {
            return Err(ModelError::BadVector {
                line: i + 1,
                reason: "expected token followed by values".into(),
            });
        }
        let token = fields[0].to_string();
        let values: Result<Vec<f64>, _> = fields[1..].iter().map(|f| f.parse::<f64>()).collect();
        let values = values.map_err(|e| ModelError::BadVector {
            line: i + 1,
            reason: e.to_string(),
        })?;
        if values.len() != expected_dim {
            return Err(ModelError::DimMismatch {
                expected: expected_dim,
                found: values.len(),
            });
        }
        out.insert(token, values);
    }
    Ok(out)
}
