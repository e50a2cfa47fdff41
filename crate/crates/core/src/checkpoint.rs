//! Checkpoint directory layout and binary parameter format.
//!
//! A checkpoint directory holds a root `manifest.json` (run config, mode,
//! target list, vocab hash), a `vocab.txt` (one token per line in id
//! order), and one subdirectory per target — or a single `pooled/` — each
//! with `phase1.bin`, `phase2.bin`, and its own `manifest.json` carrying
//! the config and vocab hash.
//!
//! Parameter files are little-endian binary with a magic, a format
//! version, the model config, and every parameter array behind a name and
//! shape header. `f64` bits pass through untouched, so save → load →
//! predict is bit-identical to in-memory predict.

use std::collections::BTreeMap;
use std::path::Path;

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::Vocab;
use crate::model::{LstmParams, ModelConfig, PhaseModel};
use crate::pipeline::{TrainConfig, TrainedModel, TwoPhaseModel};
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"TPAN";
const BIN_VERSION: u32 = 1;
const MANIFEST_VERSION: u32 = 1;
const FORMAT_NAME: &str = "tpan-checkpoint";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}: invalid manifest: {reason}")]
    BadManifest { path: String, reason: String },
    #[error("checkpoint version {found} not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("{path}: not a parameter file (bad magic)")]
    BadMagic { path: String },
    #[error("{path}: truncated parameter file")]
    Truncated { path: String },
    #[error("{path}: parameter '{name}' has shape {found:?}, expected {expected:?}")]
    ShapeMismatch {
        path: String,
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("{path}: {reason}")]
    BadParam { path: String, reason: String },
    #[error("vocabulary file does not match the hash recorded in {path}")]
    VocabHashMismatch { path: String },
    #[error("invalid vocabulary file: {0}")]
    BadVocab(String),
}

#[derive(serde::Serialize, serde::Deserialize)]
struct RootManifest {
    format: String,
    version: u32,
    mode: String,
    targets: Vec<TargetEntry>,
    config: TrainConfig,
    vocab_sha256: String,
}

#[derive(serde::Serialize, serde::Deserialize)]
struct TargetEntry {
    name: String,
    dir: String,
}

#[derive(serde::Serialize, serde::Deserialize)]
struct TargetManifest {
    target: String,
    config: TrainConfig,
    vocab_sha256: String,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CheckpointError + '_ {
    move |source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn sanitize_dir_name(target: &str) -> String {
    let mut out = String::with_capacity(target.len());
    for c in target.chars() {
        if c.is_ascii_alphanumeric() {
            out.push(c.to_ascii_lowercase());
        } else if !out.ends_with('_') {
            out.push('_');
        }
    }
    let trimmed = out.trim_matches('_').to_string();
    if trimmed.is_empty() {
        "target".to_string()
    } else {
        trimmed
    }
}

fn vocab_file_bytes(vocab: &Vocab) -> Vec<u8> {
    let mut out = String::new();
    for tok in vocab.ordered_tokens() {
        out.push_str(tok);
        out.push('\n');
    }
    out.into_bytes()
}

fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

// ── binary parameter files ──────────────────────────────────────────────

struct BinWriter {
    buf: Vec<u8>,
}

impl BinWriter {
    fn new() -> BinWriter {
        BinWriter { buf: Vec::new() }
    }

    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }
    fn u16(&mut self, v: u16) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn bytes(&mut self, v: &[u8]) {
        self.buf.extend_from_slice(v);
    }
}

struct BinReader<'a> {
    buf: &'a [u8],
    pos: usize,
    path: String,
}

impl<'a> BinReader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        if self.pos + n > self.buf.len() {
            return Err(CheckpointError::Truncated {
                path: self.path.clone(),
            });
        }
        let slice = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    fn u8(&mut self) -> Result<u8, CheckpointError> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> Result<u16, CheckpointError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }
    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64, CheckpointError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

fn encode_phase(model: &PhaseModel) -> Vec<u8> {
    let cfg = &model.config;
    let mut w = BinWriter::new();
    w.bytes(MAGIC);
    w.u32(BIN_VERSION);
    w.u32(cfg.embed_dim as u32);
    w.u32(cfg.hidden as u32);
    w.u64(cfg.seed);
    w.f64(cfg.init_scale);
    w.u8(cfg.attention as u8);
    w.u32(model.vocab_size() as u32);
    let params = model.named_params();
    w.u32(params.len() as u32);
    for (name, tensor) in params {
        let name_bytes = name.as_bytes();
        w.u16(name_bytes.len() as u16);
        w.bytes(name_bytes);
        let shape = tensor.shape();
        w.u8(shape.len() as u8);
        for d in &shape {
            w.u32(*d as u32);
        }
        tensor.with_values(|vals| {
            for &v in vals {
                w.f64(v);
            }
        });
    }
    w.buf
}

fn expected_shapes(cfg: &ModelConfig, vocab_size: usize) -> Vec<(&'static str, Vec<usize>)> {
    let d = cfg.embed_dim;
    let h = cfg.hidden;
    vec![
        ("embedding", vec![vocab_size, d]),
        ("fwd.w_input", vec![d, 4 * h]),
        ("fwd.w_recur", vec![h, 4 * h]),
        ("fwd.bias", vec![4 * h]),
        ("bwd.w_input", vec![d, 4 * h]),
        ("bwd.w_recur", vec![h, 4 * h]),
        ("bwd.bias", vec![4 * h]),
        ("attn.weight", vec![d + cfg.target_dim(), 1]),
        ("attn.bias", vec![1]),
        ("clf.weight", vec![2 * h, 2]),
        ("clf.bias", vec![2]),
    ]
}

fn decode_phase(bytes: &[u8], path: &Path) -> Result<PhaseModel, CheckpointError> {
    let mut r = BinReader {
        buf: bytes,
        pos: 0,
        path: path.display().to_string(),
    };
    if r.take(4)? != MAGIC {
        return Err(CheckpointError::BadMagic {
            path: r.path.clone(),
        });
    }
    let version = r.u32()?;
    if version != BIN_VERSION {
        return Err(CheckpointError::VersionMismatch {
            found: version,
            expected: BIN_VERSION,
        });
    }
    let embed_dim = r.u32()? as usize;
    let hidden = r.u32()? as usize;
    let seed = r.u64()?;
    let init_scale = r.f64()?;
    let attention = r.u8()? != 0;
    let vocab_size = r.u32()? as usize;
    let cfg = ModelConfig {
        embed_dim,
        hidden,
        seed,
        init_scale,
        attention,
    };
    if embed_dim == 0 || hidden == 0 || vocab_size < 2 {
        return Err(CheckpointError::BadParam {
            path: r.path.clone(),
            reason: format!("invalid config (d={embed_dim}, h={hidden}, |V|={vocab_size})"),
        });
    }

    let expected = expected_shapes(&cfg, vocab_size);
    let count = r.u32()? as usize;
    if count != expected.len() {
        return Err(CheckpointError::BadParam {
            path: r.path.clone(),
            reason: format!("expected {} parameters, found {count}", expected.len()),
        });
    }
    let mut tensors: Vec<Tensor> = Vec::with_capacity(count);
    for (exp_name, exp_shape) in &expected {
        let name_len = r.u16()? as usize;
        let name = String::from_utf8(r.take(name_len)?.to_vec()).map_err(|_| {
            CheckpointError::BadParam {
                path: r.path.clone(),
                reason: "parameter name is not UTF-8".into(),
            }
        })?;
        if &name != exp_name {
            return Err(CheckpointError::BadParam {
                path: r.path.clone(),
                reason: format!("expected parameter '{exp_name}', found '{name}'"),
            });
        }
        let ndim = r.u8()? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(r.u32()? as usize);
        }
        if &shape != exp_shape {
            return Err(CheckpointError::ShapeMismatch {
                path: r.path.clone(),
                name,
                expected: exp_shape.clone(),
                found: shape,
            });
        }
        let numel: usize = shape.iter().product();
        let mut values = Vec::with_capacity(numel);
        for _ in 0..numel {
            values.push(r.f64()?);
        }
        let tensor = Tensor::param(&shape, values).map_err(|e| CheckpointError::BadParam {
            path: r.path.clone(),
            reason: e.to_string(),
        })?;
        tensors.push(tensor);
    }
    if r.pos != bytes.len() {
        return Err(CheckpointError::BadParam {
            path: r.path.clone(),
            reason: format!("{} trailing bytes", bytes.len() - r.pos),
        });
    }

    let mut it = tensors.into_iter();
    Ok(PhaseModel {
        config: cfg,
        embedding: it.next().unwrap(),
        forward_lstm: LstmParams {
            w_input: it.next().unwrap(),
            w_recur: it.next().unwrap(),
            bias: it.next().unwrap(),
        },
        backward_lstm: LstmParams {
            w_input: it.next().unwrap(),
            w_recur: it.next().unwrap(),
            bias: it.next().unwrap(),
        },
        attn_weight: it.next().unwrap(),
        attn_bias: it.next().unwrap(),
        class_weight: it.next().unwrap(),
        class_bias: it.next().unwrap(),
    })
}

// ── directory save/load ─────────────────────────────────────────────────

fn save_two_phase(
    dir: &Path,
    two: &TwoPhaseModel,
    target: &str,
    vocab_hash: &str,
) -> Result<(), CheckpointError> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let manifest = TargetManifest {
        target: target.to_string(),
        config: two.config.clone(),
        vocab_sha256: vocab_hash.to_string(),
    };
    let manifest_path = dir.join("manifest.json");
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    std::fs::write(&manifest_path, json).map_err(io_err(&manifest_path))?;
    let p1 = dir.join("phase1.bin");
    std::fs::write(&p1, encode_phase(&two.phase1)).map_err(io_err(&p1))?;
    let p2 = dir.join("phase2.bin");
    std::fs::write(&p2, encode_phase(&two.phase2)).map_err(io_err(&p2))?;
    Ok(())
}

/// Write a trained model to a checkpoint directory.
pub fn save(model: &TrainedModel, dir: &Path) -> Result<(), CheckpointError> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let vocab_bytes = vocab_file_bytes(model.vocab());
    let vocab_hash = sha256_hex(&vocab_bytes);
    let vocab_path = dir.join("vocab.txt");
    std::fs::write(&vocab_path, &vocab_bytes).map_err(io_err(&vocab_path))?;

    let (mode, targets) = match model {
        TrainedModel::Pooled(two) => {
            save_two_phase(&dir.join("pooled"), two, "pooled", &vocab_hash)?;
            (
                "pooled".to_string(),
                vec![TargetEntry {
                    name: "pooled".into(),
                    dir: "pooled".into(),
                }],
            )
        }
        TrainedModel::PerTarget(map) => {
            let mut entries = Vec::new();
            let mut used: BTreeMap<String, usize> = BTreeMap::new();
            for (target, two) in map {
                let mut dir_name = sanitize_dir_name(target);
                let n = used.entry(dir_name.clone()).or_insert(0);
                if *n > 0 {
                    dir_name = format!("{dir_name}_{n}");
                }
                *n += 1;
                save_two_phase(&dir.join(&dir_name), two, target, &vocab_hash)?;
                entries.push(TargetEntry {
                    name: target.clone(),
                    dir: dir_name,
                });
            }
            ("per_target".to_string(), entries)
        }
    };

    let manifest = RootManifest {
        format: FORMAT_NAME.to_string(),
        version: MANIFEST_VERSION,
        mode,
        targets,
        config: model.config().clone(),
        vocab_sha256: vocab_hash,
    };
    let manifest_path = dir.join("manifest.json");
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    std::fs::write(&manifest_path, json).map_err(io_err(&manifest_path))?;
    Ok(())
}

fn read_manifest<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, CheckpointError> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|e| CheckpointError::BadManifest {
        path: path.display().to_string(),
        reason: e.to_string(),
    })
}

/// Load a checkpoint directory written by [`save`].
pub fn load(dir: &Path) -> Result<TrainedModel, CheckpointError> {
    let manifest_path = dir.join("manifest.json");
    let manifest: RootManifest = read_manifest(&manifest_path)?;
    if manifest.format != FORMAT_NAME {
        return Err(CheckpointError::BadManifest {
            path: manifest_path.display().to_string(),
            reason: format!("unknown format '{}'", manifest.format),
        });
    }
    if manifest.version != MANIFEST_VERSION {
        return Err(CheckpointError::VersionMismatch {
            found: manifest.version,
            expected: MANIFEST_VERSION,
        });
    }

    let vocab_path = dir.join("vocab.txt");
    let vocab_bytes = std::fs::read(&vocab_path).map_err(io_err(&vocab_path))?;
    if sha256_hex(&vocab_bytes) != manifest.vocab_sha256 {
        return Err(CheckpointError::VocabHashMismatch {
            path: manifest_path.display().to_string(),
        });
    }
    let vocab_text = String::from_utf8(vocab_bytes).map_err(|_| {
        CheckpointError::BadVocab("vocabulary file is not UTF-8".into())
    })?;
    let tokens: Vec<String> = vocab_text.lines().map(|l| l.to_string()).collect();
    let vocab = Vocab::from_ordered_tokens(tokens).map_err(CheckpointError::BadVocab)?;

    let load_two = |entry: &TargetEntry| -> Result<TwoPhaseModel, CheckpointError> {
        let tdir = dir.join(&entry.dir);
        let tmanifest: TargetManifest = read_manifest(&tdir.join("manifest.json"))?;
        if tmanifest.vocab_sha256 != manifest.vocab_sha256 {
            return Err(CheckpointError::VocabHashMismatch {
                path: tdir.join("manifest.json").display().to_string(),
            });
        }
        let p1_path = tdir.join("phase1.bin");
        let p1_bytes = std::fs::read(&p1_path).map_err(io_err(&p1_path))?;
        let phase1 = decode_phase(&p1_bytes, &p1_path)?;
        let p2_path = tdir.join("phase2.bin");
        let p2_bytes = std::fs::read(&p2_path).map_err(io_err(&p2_path))?;
        let phase2 = decode_phase(&p2_bytes, &p2_path)?;
        for (label, phase) in [("phase1", &phase1), ("phase2", &phase2)] {
            if phase.vocab_size() != vocab.size() {
                return Err(CheckpointError::BadParam {
                    path: tdir.join(format!("{label}.bin")).display().to_string(),
                    reason: format!(
                        "embedding rows {} do not match vocabulary size {}",
                        phase.vocab_size(),
                        vocab.size()
                    ),
                });
            }
        }
        Ok(TwoPhaseModel {
            phase1,
            phase2,
            vocab: vocab.clone(),
            config: tmanifest.config,
        })
    };

    match manifest.mode.as_str() {
        "pooled" => {
            let entry = manifest.targets.first().ok_or_else(|| CheckpointError::BadManifest {
                path: manifest_path.display().to_string(),
                reason: "pooled checkpoint lists no model directory".into(),
            })?;
            Ok(TrainedModel::Pooled(load_two(entry)?))
        }
        "per_target" => {
            if manifest.targets.is_empty() {
                return Err(CheckpointError::BadManifest {
                    path: manifest_path.display().to_string(),
                    reason: "per-target checkpoint lists no targets".into(),
                });
            }
            let mut map = BTreeMap::new();
            for entry in &manifest.targets {
                map.insert(entry.name.clone(), load_two(entry)?);
            }
            Ok(TrainedModel::PerTarget(map))
        }
        other => Err(CheckpointError::BadManifest {
            path: manifest_path.display().to_string(),
            reason: format!("unknown mode '{other}'"),
        }),
    }
}
