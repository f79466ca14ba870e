use thiserror::Error;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("shape mismatch on axis {axis} ({context}): expected {expected}, got {got}")]
    AxisMismatch {
        axis: usize,
        context: String,
        expected: usize,
        got: usize,
    },
    #[error("invalid shape ({0})")]
    InvalidShape(String),
    #[error("head count {heads} must divide width {width}")]
    HeadsMustDivideWidth { heads: usize, width: usize },
    #[error("adaptive pool target ({h}, {w}) must be positive")]
    NonPositivePoolTarget { h: usize, w: usize },
    #[error("adaptive pool target ({th}, {tw}) exceeds input ({h}, {w}); upsampling requires bilinear_resize")]
    PoolUpsample { th: usize, tw: usize, h: usize, w: usize },
}
