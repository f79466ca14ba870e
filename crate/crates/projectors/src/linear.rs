use rand_chacha::ChaCha8Rng;
use tensor_core::{ops, Tensor};

use crate::types::{FeatureMap, ProjectorOutput, ProjectorSpec, VisualTokens};
use crate::{init_bias, init_weight, Projector, ProjectorError};

/// One-to-one linear projection: tokens[i] = W * features[i] + b, so M must
/// equal N at application time.
pub struct LinearProjector {
    spec: ProjectorSpec,
    w: Tensor,
    b: Tensor,
}

impl LinearProjector {
    pub fn new(spec: ProjectorSpec, rng: &mut ChaCha8Rng) -> LinearProjector {
        let w = init_weight(rng, spec.d_t, spec.d_v);
        let b = init_bias(spec.d_t);
        LinearProjector { spec, w, b }
    }
}

impl Projector for LinearProjector {
    fn spec(&self) -> &ProjectorSpec {
        &self.spec
    }

    fn forward(&self, fm: &FeatureMap) -> Result<ProjectorOutput, ProjectorError> {
        if self.spec.num_tokens != fm.len() {
            return Err(ProjectorError::Inflexible {
                kind: "linear".into(),
                m: self.spec.num_tokens,
                n: fm.len(),
            });
        }
        let tokens = ops::linear(&fm.features, &self.w, &self.b);
        Ok(ProjectorOutput {
            tokens: VisualTokens { tokens },
            trace: None,
        })
    }

    fn params(&self) -> Vec<(String, Tensor)> {
        vec![("w".into(), self.w.clone()), ("b".into(), self.b.clone())]
    }
}

/// Per-feature k-layer MLP with gelu between layers; one-to-one like the
/// linear projector.
pub struct MlpProjector {
    spec: ProjectorSpec,
    layers: Vec<(Tensor, Tensor)>,
}

impl MlpProjector {
    pub fn new(spec: ProjectorSpec, rng: &mut ChaCha8Rng) -> MlpProjector {
        let mut layers = Vec::with_capacity(spec.mlp_layers);
        for i in 0..spec.mlp_layers {
            let din = if i == 0 { spec.d_v } else { spec.d_t };
            layers.push((init_weight(rng, spec.d_t, din), init_bias(spec.d_t)));
        }
        MlpProjector { spec, layers }
    }
}

impl Projector for MlpProjector {
    fn spec(&self) -> &ProjectorSpec {
        &self.spec
    }

    fn forward(&self, fm: &FeatureMap) -> Result<ProjectorOutput, ProjectorError> {
        if self.spec.num_tokens != fm.len() {
            return Err(ProjectorError::Inflexible {
                kind: "mlp".into(),
                m: self.spec.num_tokens,
                n: fm.len(),
            });
        }
        let mut x = fm.features.clone();
        for (i, (w, b)) in self.layers.iter().enumerate() {
            x = ops::linear(&x, w, b);
            if i + 1 < self.layers.len() {
                x = ops::gelu(&x);
            }
        }
        Ok(ProjectorOutput {
            tokens: VisualTokens { tokens: x },
            trace: None,
        })
    }

    fn params(&self) -> Vec<(String, Tensor)> {
        self.layers
            .iter()
            .enumerate()
            .flat_map(|(i, (w, b))| {
                vec![
                    (format!("layer{i}.w"), w.clone()),
                    (format!("layer{i}.b"), b.clone()),
                ]
            })
            .collect()
    }
}
