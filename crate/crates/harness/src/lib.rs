//! Glue layer: frozen stub vision encoder + projector + tiny causal LM,
//! the two-stage training loop over synthetic corpora, normalized-average
//! metrics, and step-cost profiling.

pub mod ckpt;
pub mod encoder;
mod error;
pub mod lm;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod probe;
pub mod profile;
pub mod stage;

pub use ckpt::{load_model, save_model};
pub use encoder::{EncoderConfig, FeatureLayer, StubVisionEncoder};
pub use error::HarnessError;
pub use lm::{LmConfig, TinyLM, IMG_END, IMG_START};
pub use metrics::{avg_n, BenchScores, ScoreEntry};
pub use model::{assemble, param_checksum, CorpusItem, Model, ModelConfig};
pub use optim::{cosine_lr, AdamW};
pub use probe::{evaluate_probe, synthetic_probe, ProbeItem};
pub use profile::{profile_step, step_flops, ProfileReport};
pub use stage::{run_stage, LogRow, Stage, StageConfig, TrainingLog};
