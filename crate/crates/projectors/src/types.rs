use serde::{Deserialize, Serialize};
use tensor_core::{ops, Tensor};

use crate::ProjectorError;

/// The vision encoder's N = H*W region features of width `d_v`.
pub struct FeatureMap {
    /// [N, D_v], row-major over the grid (row i*W + j is cell (i, j)).
    pub features: Tensor,
    pub grid: (usize, usize),
}

impl FeatureMap {
    pub fn new(features: Tensor, grid: (usize, usize)) -> FeatureMap {
        assert_eq!(features.shape().len(), 2, "features must be [N, D_v]");
        assert_eq!(
            features.shape()[0],
            grid.0 * grid.1,
            "N must equal H*W ({}x{})",
            grid.0,
            grid.1
        );
        FeatureMap { features, grid }
    }

    pub fn len(&self) -> usize {
        self.features.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn width(&self) -> usize {
        self.features.shape()[1]
    }

    /// [D_v, H, W] view for convolutional / sampling kernels.
    pub fn as_chw(&self) -> Tensor {
        let (h, w) = self.grid;
        let d = self.width();
        ops::reshape(&ops::transpose(&self.features), &[d, h, w])
    }

    /// [1, D_v, H, W] view.
    pub fn as_bchw(&self) -> Tensor {
        let (h, w) = self.grid;
        let d = self.width();
        ops::reshape(&ops::transpose(&self.features), &[1, d, h, w])
    }
}

/// M projected tokens of LLM width `d_t`.
pub struct VisualTokens {
    /// [M, D_t]
    pub tokens: Tensor,
}

impl VisualTokens {
    pub fn len(&self) -> usize {
        self.tokens.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProjectorKind {
    Linear,
    Mlp,
    Resampler,
    CAbstractor,
    DAbstractor,
}

impl std::fmt::Display for ProjectorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            ProjectorKind::Linear => "linear",
            ProjectorKind::Mlp => "mlp",
            ProjectorKind::Resampler => "resampler",
            ProjectorKind::CAbstractor => "c_abstractor",
            ProjectorKind::DAbstractor => "d_abstractor",
        };
        f.write_str(s)
    }
}

/// Convolution block family used inside the C-Abstractor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ConvVariant {
    /// ResNet bottleneck with squeeze-excitation (the default).
    #[default]
    ResNet,
    ConvNext,
    StandardConv,
}

/// Tagged configuration selecting and parameterizing one projector family.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProjectorSpec {
    pub kind: ProjectorKind,
    /// M, the number of output visual tokens.
    pub num_tokens: usize,
    pub d_v: usize,
    pub d_t: usize,
    /// MLP depth (2..=6).
    #[serde(default = "default_mlp_layers")]
    pub mlp_layers: usize,
    /// Cross-attention blocks in the resampler.
    #[serde(default = "default_resampler_layers")]
    pub resampler_layers: usize,
    /// L: ResNet blocks before and after pooling in the C-Abstractor.
    #[serde(default = "default_conv_blocks")]
    pub conv_blocks: usize,
    /// Deformable attention blocks in the D-Abstractor.
    #[serde(default = "default_deform_blocks")]
    pub deform_blocks: usize,
    #[serde(default = "default_heads")]
    pub heads: usize,
    /// K: sampling offsets per reference point.
    #[serde(default = "default_offsets")]
    pub offsets_per_query: usize,
    /// Learned positional table on resampler keys/values.
    #[serde(default)]
    pub pos_emb: bool,
    /// Query self-attention inside D-Abstractor blocks.
    #[serde(default)]
    pub self_attn: bool,
    /// Permit M > N via bilinear upsampling.
    #[serde(default)]
    pub allow_upsample: bool,
    /// N, needed only to size the resampler's positional table.
    #[serde(default)]
    pub num_features: Option<usize>,
    #[serde(default)]
    pub conv_variant: ConvVariant,
}

fn default_mlp_layers() -> usize {
    2
}
fn default_resampler_layers() -> usize {
    3
}
fn default_conv_blocks() -> usize {
    3
}
fn default_deform_blocks() -> usize {
    6
}
fn default_heads() -> usize {
    4
}
fn default_offsets() -> usize {
    4
}

impl ProjectorSpec {
    pub fn new(kind: ProjectorKind, num_tokens: usize, d_v: usize, d_t: usize) -> ProjectorSpec {
        ProjectorSpec {
            kind,
            num_tokens,
            d_v,
            d_t,
            mlp_layers: default_mlp_layers(),
            resampler_layers: default_resampler_layers(),
            conv_blocks: default_conv_blocks(),
            deform_blocks: default_deform_blocks(),
            heads: default_heads(),
            offsets_per_query: default_offsets(),
            pos_emb: false,
            self_attn: false,
            allow_upsample: false,
            num_features: None,
            conv_variant: ConvVariant::ResNet,
        }
    }

    /// Side of the sqrt(M) x sqrt(M) token grid, if M is a perfect square.
    pub fn token_grid_side(&self) -> Option<usize> {
        let side = (self.num_tokens as f64).sqrt().round() as usize;
        (side * side == self.num_tokens).then_some(side)
    }

    pub fn validate(&self) -> Result<(), ProjectorError> {
        assert!(self.num_tokens > 0 && self.d_v > 0 && self.d_t > 0);
        match self.kind {
            ProjectorKind::Mlp => {
                if !(2..=6).contains(&self.mlp_layers) {
                    return Err(ProjectorError::BadMlpDepth(self.mlp_layers));
                }
            }
            ProjectorKind::CAbstractor | ProjectorKind::DAbstractor => {
                if self.token_grid_side().is_none() {
                    return Err(ProjectorError::NonSquareTokenCount {
                        kind: self.kind.to_string(),
                        m: self.num_tokens,
                    });
                }
                if self.kind == ProjectorKind::DAbstractor && self.offsets_per_query == 0 {
                    return Err(ProjectorError::NoOffsets);
                }
            }
            ProjectorKind::Resampler => {
                if self.pos_emb && self.num_features.is_none() {
                    return Err(ProjectorError::MissingFeatureCount);
                }
            }
            ProjectorKind::Linear => {}
        }
        Ok(())
    }
}

/// Per-layer, per-query attention mass over the feature grid.
#[derive(Debug, Clone)]
pub struct AttentionTrace {
    pub layers: usize,
    pub queries: usize,
    pub grid: (usize, usize),
    /// [layers, queries, H, W], row-major.
    pub data: Vec<f64>,
}

impl AttentionTrace {
    pub fn zeros(layers: usize, queries: usize, grid: (usize, usize)) -> AttentionTrace {
        AttentionTrace {
            layers,
            queries,
            grid,
            data: vec![0.0; layers * queries * grid.0 * grid.1],
        }
    }

    pub fn slice(&self, layer: usize, query: usize) -> &[f64] {
        let hw = self.grid.0 * self.grid.1;
        let base = (layer * self.queries + query) * hw;
        &self.data[base..base + hw]
    }

    pub fn slice_mut(&mut self, layer: usize, query: usize) -> &mut [f64] {
        let hw = self.grid.0 * self.grid.1;
        let base = (layer * self.queries + query) * hw;
        &mut self.data[base..base + hw]
    }
}

/// Projector output: tokens plus a trace for the attention-based families.
pub struct ProjectorOutput {
    pub tokens: VisualTokens,
    pub trace: Option<AttentionTrace>,
}
