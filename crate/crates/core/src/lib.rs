//! Time-decayed, checkpoint-based training-data influence estimation for
//! sequential behavior data, plus the machinery around it: dataset
//! ingestion and synthesis, small differentiable models with per-sample
//! gradients, an SGD trainer with binary checkpoint persistence, Top-K
//! pruning with hybrid dataset mixing, instruction-data rendering, and a
//! credit-risk evaluation suite with a leave-one-out retraining oracle.
//!
//! The influence score of a training sample on a test sample is the sum
//! over stored checkpoints of `gamma^(T - t_i) * eta_i * <g_train, g_test>`;
//! `gamma = 1` recovers plain checkpoint gradient similarity.
//!
//! Data-parallel scoring over training samples is enabled by the default
//! `parallel` feature (rayon); disabling it leaves a sequential fallback
//! with identical outputs.

pub mod dataset;
pub mod error;
pub mod eval;
pub mod influence;
pub mod model;
pub mod pruner;
pub mod trainer;

pub use dataset::{Dataset, EvalSet, Sample, SyntheticConfig};
pub use error::{Error, Result};
pub use influence::{DecayConfig, InfluenceRecord, TimeAxis};
pub use model::{ModelKind, ModelSpec, ParameterVector};
pub use pruner::{InstructionTemplate, MixPlan, Task};
pub use trainer::{Checkpoint, CheckpointStore, LrSchedule, TrainConfig};
