use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("dimension mismatch at assembly: {0}")]
    DimensionMismatch(String),
    #[error("response span is empty; the loss needs at least one response token")]
    EmptyResponse,
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("loss became non-finite at step {step}")]
    NonFiniteLoss { step: usize },
    #[error("score {name:?} has no upper bound")]
    MissingBound { name: String },
    #[error("score {name:?} = {score} falls outside [0, {bound}]")]
    ScoreOutOfRange { name: String, score: f64, bound: f64 },
    #[error("probe needs at least one item with at least two options")]
    EmptyProbe,
    #[error(transparent)]
    Projector(#[from] projectors::ProjectorError),
    #[error(transparent)]
    Tensor(#[from] tensor_core::TensorError),
    #[error(transparent)]
    Mixer(#[from] mixer::MixerError),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}
