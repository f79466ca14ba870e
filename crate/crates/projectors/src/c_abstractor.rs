use rand_chacha::ChaCha8Rng;
use tensor_core::{ops, Tensor};

use crate::types::{ConvVariant, FeatureMap, ProjectorOutput, ProjectorSpec, VisualTokens};
use crate::{init_bias, init_tensor, init_weight, Projector, ProjectorError};

/// ResNet bottleneck with squeeze-excitation: 1x1 reduce, 3x3, 1x1 expand,
/// channel gate, residual add. No post-activation, so zeroing the final conv
/// makes the block an exact identity.
struct Bottleneck {
    conv1: Tensor,
    conv2: Tensor,
    conv3: Tensor,
    se_w1: Tensor,
    se_b1: Tensor,
    se_w2: Tensor,
    se_b2: Tensor,
}

impl Bottleneck {
    fn new(rng: &mut ChaCha8Rng, c: usize) -> Bottleneck {
        // Expansion 4, squeeze-excitation reduction 16.
        let mid = (c / 4).max(1);
        let se = (c / 16).max(1);
        let s1 = 1.0 / (c as f64).sqrt();
        let s2 = 1.0 / (mid as f64 * 9.0).sqrt();
        Bottleneck {
            conv1: init_tensor(rng, &[mid, c, 1, 1], s1),
            conv2: init_tensor(rng, &[mid, mid, 3, 3], s2),
            conv3: init_tensor(rng, &[c, mid, 1, 1], 1.0 / (mid as f64).sqrt()),
            se_w1: init_weight(rng, se, c),
            se_b1: init_bias(se),
            se_w2: init_weight(rng, c, se),
            se_b2: init_bias(c),
        }
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor, ProjectorError> {
        let (b, c) = (x.shape()[0], x.shape()[1]);
        let h = ops::relu(&ops::conv2d(x, &self.conv1, 1, 0)?);
        let h = ops::relu(&ops::conv2d(&h, &self.conv2, 1, 1)?);
        let h = ops::conv2d(&h, &self.conv3, 1, 0)?;
        let pooled = ops::reshape(&ops::adaptive_avg_pool2d(&h, (1, 1))?, &[b, c]);
        let gate = ops::sigmoid(&ops::linear(
            &ops::relu(&ops::linear(&pooled, &self.se_w1, &self.se_b1)),
            &self.se_w2,
            &self.se_b2,
        ));
        Ok(ops::add(x, &ops::mul_channels(&h, &gate)))
    }

    fn named(&self, prefix: &str) -> Vec<(String, Tensor)> {
        [
            ("conv1", &self.conv1),
            ("conv2", &self.conv2),
            ("conv3", &self.conv3),
            ("se_w1", &self.se_w1),
            ("se_b1", &self.se_b1),
            ("se_w2", &self.se_w2),
            ("se_b2", &self.se_b2),
        ]
        .into_iter()
        .map(|(n, t)| (format!("{prefix}.{n}"), t.clone()))
        .collect()
    }
}

/// ConvNext-style block: 3x3 spatial conv, then a pointwise inverted
/// bottleneck, residual add. Final pointwise conv zero => identity.
struct ConvNextBlock {
    conv: Tensor,
    pw1: Tensor,
    pw2: Tensor,
}

impl ConvNextBlock {
    fn new(rng: &mut ChaCha8Rng, c: usize) -> ConvNextBlock {
        let f = 4 * c;
        ConvNextBlock {
            conv: init_tensor(rng, &[c, c, 3, 3], 1.0 / (c as f64 * 9.0).sqrt()),
            pw1: init_tensor(rng, &[f, c, 1, 1], 1.0 / (c as f64).sqrt()),
            pw2: init_tensor(rng, &[c, f, 1, 1], 1.0 / (f as f64).sqrt()),
        }
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor, ProjectorError> {
        let h = ops::conv2d(x, &self.conv, 1, 1)?;
        let h = ops::gelu(&ops::conv2d(&h, &self.pw1, 1, 0)?);
        let h = ops::conv2d(&h, &self.pw2, 1, 0)?;
        Ok(ops::add(x, &h))
    }

    fn named(&self, prefix: &str) -> Vec<(String, Tensor)> {
        [("conv", &self.conv), ("pw1", &self.pw1), ("pw2", &self.pw2)]
            .into_iter()
            .map(|(n, t)| (format!("{prefix}.{n}"), t.clone()))
            .collect()
    }
}

/// Plain 3x3 convolution + relu, no residual.
struct StandardConvBlock {
    conv: Tensor,
}

impl StandardConvBlock {
    fn new(rng: &mut ChaCha8Rng, c: usize) -> StandardConvBlock {
        StandardConvBlock {
            conv: init_tensor(rng, &[c, c, 3, 3], 1.0 / (c as f64 * 9.0).sqrt()),
        }
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor, ProjectorError> {
        Ok(ops::relu(&ops::conv2d(x, &self.conv, 1, 1)?))
    }
}

enum ConvBlock {
    ResNet(Bottleneck),
    ConvNext(ConvNextBlock),
    Standard(StandardConvBlock),
}

impl ConvBlock {
    fn new(rng: &mut ChaCha8Rng, variant: ConvVariant, c: usize) -> ConvBlock {
        match variant {
            ConvVariant::ResNet => ConvBlock::ResNet(Bottleneck::new(rng, c)),
            ConvVariant::ConvNext => ConvBlock::ConvNext(ConvNextBlock::new(rng, c)),
            ConvVariant::StandardConv => ConvBlock::Standard(StandardConvBlock::new(rng, c)),
        }
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor, ProjectorError> {
        match self {
            ConvBlock::ResNet(b) => b.forward(x),
            ConvBlock::ConvNext(b) => b.forward(x),
            ConvBlock::Standard(b) => b.forward(x),
        }
    }

    fn named(&self, prefix: &str) -> Vec<(String, Tensor)> {
        match self {
            ConvBlock::ResNet(b) => b.named(prefix),
            ConvBlock::ConvNext(b) => b.named(prefix),
            ConvBlock::Standard(b) => vec![(format!("{prefix}.conv"), b.conv.clone())],
        }
    }
}

/// Convolutional abstractor: L conv blocks, adaptive average pooling to the
/// sqrt(M) x sqrt(M) token grid, L more blocks, pointwise linear to D_t.
pub struct CAbstractor {
    spec: ProjectorSpec,
    pre: Vec<ConvBlock>,
    post: Vec<ConvBlock>,
    w_out: Tensor,
    b_out: Tensor,
}

impl CAbstractor {
    pub fn new(spec: ProjectorSpec, rng: &mut ChaCha8Rng) -> CAbstractor {
        let c = spec.d_v;
        let pre = (0..spec.conv_blocks)
            .map(|_| ConvBlock::new(rng, spec.conv_variant, c))
            .collect();
        let post = (0..spec.conv_blocks)
            .map(|_| ConvBlock::new(rng, spec.conv_variant, c))
            .collect();
        CAbstractor {
            w_out: init_weight(rng, spec.d_t, c),
            b_out: init_bias(spec.d_t),
            pre,
            post,
            spec,
        }
    }
}

impl Projector for CAbstractor {
    fn spec(&self) -> &ProjectorSpec {
        &self.spec
    }

    fn forward(&self, fm: &FeatureMap) -> Result<ProjectorOutput, ProjectorError> {
        let m = self.spec.num_tokens;
        let side = self
            .spec
            .token_grid_side()
            .ok_or_else(|| ProjectorError::NonSquareTokenCount {
                kind: "c_abstractor".into(),
                m,
            })?;
        let n = fm.len();
        if m > n && !self.spec.allow_upsample {
            return Err(ProjectorError::UpsampleNotAllowed { m, n });
        }
        let mut x = fm.as_bchw();
        for blk in &self.pre {
            x = blk.forward(&x)?;
        }
        let (h, w) = fm.grid;
        x = if side <= h && side <= w {
            ops::adaptive_avg_pool2d(&x, (side, side))?
        } else {
            ops::bilinear_resize(&x, (side, side))?
        };
        for blk in &self.post {
            x = blk.forward(&x)?;
        }
        // [1, C, s, s] -> [M, C] -> [M, D_t]
        let rows = ops::transpose(&ops::reshape(&x, &[self.spec.d_v, m]));
        let tokens = ops::linear(&rows, &self.w_out, &self.b_out);
        Ok(ProjectorOutput {
            tokens: VisualTokens { tokens },
            trace: None,
        })
    }

    fn params(&self) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        for (i, blk) in self.pre.iter().enumerate() {
            out.extend(blk.named(&format!("pre{i}")));
        }
        for (i, blk) in self.post.iter().enumerate() {
            out.extend(blk.named(&format!("post{i}")));
        }
        out.push(("w_out".to_string(), self.w_out.clone()));
        out.push(("b_out".to_string(), self.b_out.clone()));
        out
    }
}
