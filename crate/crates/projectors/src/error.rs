use thiserror::Error;

#[derive(Debug, Error)]
pub enum ProjectorError {
    #[error("{kind} projector is inflexible: it maps features one-to-one, so M={m} requires N={m} but the feature map has N={n}")]
    Inflexible { kind: String, m: usize, n: usize },
    #[error("{kind} requires a perfect-square token count, got M={m}")]
    NonSquareTokenCount { kind: String, m: usize },
    #[error("M={m} exceeds N={n}; projecting to more tokens than features requires allow_upsample")]
    UpsampleNotAllowed { m: usize, n: usize },
    #[error("D-Abstractor needs at least one sampling offset per query (K >= 1)")]
    NoOffsets,
    #[error("MLP depth must be between 2 and 6, got {0}")]
    BadMlpDepth(usize),
    #[error("resampler positional table needs the feature count: set num_features in the spec")]
    MissingFeatureCount,
    #[error("feature map has N={got} features but the positional table was built for N={expected}")]
    FeatureCountMismatch { expected: usize, got: usize },
    #[error(transparent)]
    Tensor(#[from] tensor_core::TensorError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("checkpoint is not valid: {0}")]
    BadCheckpoint(String),
}
