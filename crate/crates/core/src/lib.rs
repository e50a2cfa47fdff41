//! Two-phase stance detection for SemEval 2016 Task 6 style data: a
//! subjectivity phase routes neutral tweets to NONE, a polarity phase
//! labels the rest FAVOR or AGAINST. Each phase is a bi-directional LSTM
//! with target-conditioned attention, trained with a small tape-based
//! autodiff engine.

pub mod checkpoint;
pub mod corpus;
pub mod eval;
pub mod gradcheck;
pub mod model;
pub mod optim;
pub mod pipeline;
pub mod tensor;
pub mod textprep;

pub use corpus::{derive_phase1, Example, Phase1Label, Stance, Vocab};
pub use model::{ModelConfig, PhaseModel};
pub use optim::{Optimizer, OptimizerKind};
pub use pipeline::{TrainConfig, TrainedModel, TwoPhaseModel};
pub use tensor::{Tape, Tensor, TensorError};
