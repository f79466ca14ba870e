//! Visual projectors: the five families mapping N encoder features to M
//! visual tokens (linear, MLP, resampler, C-Abstractor, D-Abstractor), with
//! attention tracing, parameter checkpoints, and construction-time
//! flexibility guarantees.

mod c_abstractor;
mod checkpoint;
mod d_abstractor;
mod error;
mod linear;
mod resampler;
mod trace;
mod types;

pub use c_abstractor::CAbstractor;
pub use checkpoint::{load_checkpoint, load_into, save_checkpoint, Checkpoint};
pub use d_abstractor::{DAbstractor, DeformBlock};
pub use error::ProjectorError;
pub use linear::{LinearProjector, MlpProjector};
pub use resampler::Resampler;
pub use trace::export_attention_trace;
pub use types::{
    AttentionTrace, ConvVariant, FeatureMap, ProjectorKind, ProjectorOutput, ProjectorSpec,
    VisualTokens,
};

use rand_chacha::ChaCha8Rng;
use tensor_core::Tensor;

/// Common surface of all projector families.
pub trait Projector {
    fn spec(&self) -> &ProjectorSpec;

    /// Map a feature map to visual tokens, with an attention trace where the
    /// family has one (resampler, D-Abstractor).
    fn forward(&self, fm: &FeatureMap) -> Result<ProjectorOutput, ProjectorError>;

    /// Named parameter tensors, in a stable order.
    fn params(&self) -> Vec<(String, Tensor)>;

    /// Deterministic total parameter count.
    fn param_count(&self) -> usize {
        self.params().iter().map(|(_, p)| p.numel()).sum()
    }
}

/// Construct a projector from its spec. Construction never depends on N for
/// the flexible families; inflexible families (linear, MLP) only reject at
/// application time.
pub fn build(spec: &ProjectorSpec, rng: &mut ChaCha8Rng) -> Result<Box<dyn Projector>, ProjectorError> {
    spec.validate()?;
    Ok(match spec.kind {
        ProjectorKind::Linear => Box::new(LinearProjector::new(spec.clone(), rng)),
        ProjectorKind::Mlp => Box::new(MlpProjector::new(spec.clone(), rng)),
        ProjectorKind::Resampler => Box::new(Resampler::new(spec.clone(), rng)?),
        ProjectorKind::CAbstractor => Box::new(CAbstractor::new(spec.clone(), rng)),
        ProjectorKind::DAbstractor => Box::new(DAbstractor::new(spec.clone(), rng)),
    })
}

pub(crate) fn init_weight(rng: &mut ChaCha8Rng, dout: usize, din: usize) -> Tensor {
    use rand::Rng;
    let scale = 1.0 / (din as f64).sqrt();
    let data = (0..dout * din).map(|_| rng.gen_range(-scale..scale)).collect();
    Tensor::param(&[dout, din], data)
}

pub(crate) fn init_bias(dout: usize) -> Tensor {
    Tensor::param(&[dout], vec![0.0; dout])
}

pub(crate) fn init_tensor(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor {
    use rand::Rng;
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-scale..scale)).collect();
    Tensor::param(shape, data)
}
