use rand_chacha::ChaCha8Rng;
use tensor_core::{ops, Tensor};

use crate::types::{AttentionTrace, FeatureMap, ProjectorOutput, ProjectorSpec, VisualTokens};
use crate::{init_bias, init_weight, Projector, ProjectorError};

pub struct DeformBlock {
    pub offset_w: Tensor,
    pub offset_b: Tensor,
    pub logit_w: Tensor,
    pub logit_b: Tensor,
    pub w_v: Tensor,
    pub b_v: Tensor,
    pub ln1_gain: Tensor,
    pub ln1_bias: Tensor,
    pub ffn_w1: Tensor,
    pub ffn_b1: Tensor,
    pub ffn_w2: Tensor,
    pub ffn_b2: Tensor,
    pub ln2_gain: Tensor,
    pub ln2_bias: Tensor,
    pub sa: Option<SelfAttn>,
}

pub struct SelfAttn {
    pub w_q: Tensor,
    pub b_q: Tensor,
    pub w_k: Tensor,
    pub w_v: Tensor,
    pub b_v: Tensor,
    pub w_o: Tensor,
    pub b_o: Tensor,
    pub ln_gain: Tensor,
    pub ln_bias: Tensor,
}

impl DeformBlock {
    fn new(rng: &mut ChaCha8Rng, d: usize, d_v: usize, k: usize, self_attn: bool) -> DeformBlock {
        let f = 4 * d;
        let sa = self_attn.then(|| SelfAttn {
            w_q: init_weight(rng, d, d),
            b_q: init_bias(d),
            w_k: init_weight(rng, d, d),
            w_v: init_weight(rng, d, d),
            b_v: init_bias(d),
            w_o: init_weight(rng, d, d),
            b_o: init_bias(d),
            ln_gain: Tensor::param(&[d], vec![1.0; d]),
            ln_bias: init_bias(d),
        });
        DeformBlock {
            offset_w: init_weight(rng, 2 * k, d),
            offset_b: init_bias(2 * k),
            logit_w: init_weight(rng, k, d),
            logit_b: init_bias(k),
            w_v: init_weight(rng, d, d_v),
            b_v: init_bias(d),
            ln1_gain: Tensor::param(&[d], vec![1.0; d]),
            ln1_bias: init_bias(d),
            ffn_w1: init_weight(rng, f, d),
            ffn_b1: init_bias(f),
            ffn_w2: init_weight(rng, d, f),
            ffn_b2: init_bias(d),
            ln2_gain: Tensor::param(&[d], vec![1.0; d]),
            ln2_bias: init_bias(d),
            sa,
        }
    }

    fn named(&self, prefix: &str) -> Vec<(String, Tensor)> {
        let mut out: Vec<(String, Tensor)> = [
            ("offset_w", &self.offset_w),
            ("offset_b", &self.offset_b),
            ("logit_w", &self.logit_w),
            ("logit_b", &self.logit_b),
            ("w_v", &self.w_v),
            ("b_v", &self.b_v),
            ("ln1_gain", &self.ln1_gain),
            ("ln1_bias", &self.ln1_bias),
            ("ffn_w1", &self.ffn_w1),
            ("ffn_b1", &self.ffn_b1),
            ("ffn_w2", &self.ffn_w2),
            ("ffn_b2", &self.ffn_b2),
            ("ln2_gain", &self.ln2_gain),
            ("ln2_bias", &self.ln2_bias),
        ]
        .into_iter()
        .map(|(n, t)| (format!("{prefix}.{n}"), t.clone()))
        .collect();
        if let Some(sa) = &self.sa {
            out.extend(
                [
                    ("sa_w_q", &sa.w_q),
                    ("sa_b_q", &sa.b_q),
                    ("sa_w_k", &sa.w_k),
                    ("sa_w_v", &sa.w_v),
                    ("sa_b_v", &sa.b_v),
                    ("sa_w_o", &sa.w_o),
                    ("sa_b_o", &sa.b_o),
                    ("sa_ln_gain", &sa.ln_gain),
                    ("sa_ln_bias", &sa.ln_bias),
                ]
                .into_iter()
                .map(|(n, t)| (format!("{prefix}.{n}"), t.clone())),
            );
        }
        out
    }
}

/// Deformable-attention abstractor. Queries start from an adaptive average
/// pool of the feature map (v-pooled Q); reference points sit on the
/// sqrt(M) x sqrt(M) cell-center grid (M-RP) and stay fixed across blocks.
/// Each block predicts K sampling offsets and weights per query, gathers
/// bilinear samples near the reference point, and folds them into the query.
pub struct DAbstractor {
    spec: ProjectorSpec,
    w_init: Tensor,
    b_init: Tensor,
    blocks: Vec<DeformBlock>,
    w_out: Tensor,
    b_out: Tensor,
    /// Offsets are predicted in normalized units and scaled by 1/sqrt(M) so a
    /// fresh model samples near its reference points.
    offset_scale: f64,
}

impl DAbstractor {
    pub fn new(spec: ProjectorSpec, rng: &mut ChaCha8Rng) -> DAbstractor {
        let d = spec.d_t;
        let blocks = (0..spec.deform_blocks)
            .map(|_| DeformBlock::new(rng, d, spec.d_v, spec.offsets_per_query, spec.self_attn))
            .collect();
        DAbstractor {
            w_init: init_weight(rng, d, spec.d_v),
            b_init: init_bias(d),
            blocks,
            w_out: init_weight(rng, spec.d_t, d),
            b_out: init_bias(spec.d_t),
            offset_scale: 1.0 / (spec.num_tokens as f64).sqrt(),
            spec,
        }
    }

    /// M-RP: reference points on the sqrt(M) x sqrt(M) cell-center grid,
    /// row coordinate first, in [0, 1]^2.
    pub fn reference_points(&self) -> Tensor {
        let side = self.spec.token_grid_side().expect("validated at build");
        let mut pts = Vec::with_capacity(side * side * 2);
        for i in 0..side {
            for j in 0..side {
                pts.push((i as f64 + 0.5) / side as f64);
                pts.push((j as f64 + 0.5) / side as f64);
            }
        }
        Tensor::new(&[side * side, 2], pts)
    }

    /// v-pooled Q: initial query state from an adaptive pool of the feature
    /// map projected to query width.
    pub fn initial_queries(&self, fm: &FeatureMap) -> Result<Tensor, ProjectorError> {
        let side = self.spec.token_grid_side().expect("validated at build");
        let (h, w) = fm.grid;
        let x = fm.as_bchw();
        let pooled = if side <= h && side <= w {
            ops::adaptive_avg_pool2d(&x, (side, side))?
        } else {
            ops::bilinear_resize(&x, (side, side))?
        };
        let rows = ops::transpose(&ops::reshape(&pooled, &[self.spec.d_v, side * side]));
        Ok(ops::linear(&rows, &self.w_init, &self.b_init))
    }

    pub fn offset_scale(&self) -> f64 {
        self.offset_scale
    }

    /// One block's deformable aggregation: z, offsets, weights -> the
    /// weighted sum of value-projected bilinear samples around each
    /// reference point. Also scatters the attention mass into `trace_slice`
    /// ([H*W] per query) when given.
    pub fn aggregate_block(
        &self,
        blk: &DeformBlock,
        z: &Tensor,
        feat_chw: &Tensor,
        refs: &Tensor,
        mut trace: Option<(&mut AttentionTrace, usize)>,
    ) -> Result<Tensor, ProjectorError> {
        let m = self.spec.num_tokens;
        let k = self.spec.offsets_per_query;
        let (h, w) = (feat_chw.shape()[1], feat_chw.shape()[2]);
        let offsets = ops::scale(
            &ops::linear(z, &blk.offset_w, &blk.offset_b),
            self.offset_scale,
        );
        let weights = ops::softmax(&ops::linear(z, &blk.logit_w, &blk.logit_b), 1);
        let mut agg: Option<Tensor> = None;
        for ki in 0..k {
            let off_k = ops::slice_cols(&offsets, 2 * ki, 2 * ki + 2);
            let pts = ops::add(refs, &off_k);
            let sampled = ops::bilinear_sample(feat_chw, &pts);
            let valued = ops::linear(&sampled, &blk.w_v, &blk.b_v);
            let a_k = ops::slice_cols(&weights, ki, ki + 1);
            let term = ops::mul_rows(&valued, &a_k);
            agg = Some(match agg {
                Some(acc) => ops::add(&acc, &term),
                None => term,
            });
            if let Some((trace, layer)) = trace.as_mut() {
                let pd = pts.to_vec();
                let ad = a_k.to_vec();
                for qi in 0..m {
                    scatter_bilinear(
                        trace.slice_mut(*layer, qi),
                        (h, w),
                        pd[qi * 2],
                        pd[qi * 2 + 1],
                        ad[qi],
                    );
                }
            }
        }
        Ok(agg.expect("K >= 1 enforced at validation"))
    }

    pub fn blocks(&self) -> &[DeformBlock] {
        &self.blocks
    }
}

/// Deposit `mass` at normalized position (u, v) onto a grid, bilinearly over
/// the 4 neighbor cells with border clamping (same convention as sampling).
fn scatter_bilinear(grid: &mut [f64], (h, w): (usize, usize), u: f64, v: f64, mass: f64) {
    let py = u * h as f64 - 0.5;
    let px = v * w as f64 - 0.5;
    let y0 = py.floor() as isize;
    let x0 = px.floor() as isize;
    let ty = py - y0 as f64;
    let tx = px - x0 as f64;
    let cl = |v: isize, hi: usize| v.clamp(0, hi as isize - 1) as usize;
    let (r0, r1) = (cl(y0, h), cl(y0 + 1, h));
    let (c0, c1) = (cl(x0, w), cl(x0 + 1, w));
    grid[r0 * w + c0] += mass * (1.0 - ty) * (1.0 - tx);
    grid[r0 * w + c1] += mass * (1.0 - ty) * tx;
    grid[r1 * w + c0] += mass * ty * (1.0 - tx);
    grid[r1 * w + c1] += mass * ty * tx;
}

impl Projector for DAbstractor {
    fn spec(&self) -> &ProjectorSpec {
        &self.spec
    }

    fn forward(&self, fm: &FeatureMap) -> Result<ProjectorOutput, ProjectorError> {
        let m = self.spec.num_tokens;
        let n = fm.len();
        if m > n && !self.spec.allow_upsample {
            return Err(ProjectorError::UpsampleNotAllowed { m, n });
        }
        let feat_chw = fm.as_chw();
        let refs = self.reference_points();
        let mut z = self.initial_queries(fm)?;
        let mut trace = AttentionTrace::zeros(self.blocks.len(), m, fm.grid);
        for (li, blk) in self.blocks.iter().enumerate() {
            let agg = self.aggregate_block(blk, &z, &feat_chw, &refs, Some((&mut trace, li)))?;
            z = ops::layer_norm(&ops::add(&z, &agg), &blk.ln1_gain, &blk.ln1_bias);
            if let Some(sa) = &blk.sa {
                let q = ops::linear(&z, &sa.w_q, &sa.b_q);
                let k = ops::matmul(&z, &ops::transpose(&sa.w_k));
                let v = ops::linear(&z, &sa.w_v, &sa.b_v);
                let (att, _) = ops::multi_head_attention(&q, &k, &v, self.spec.heads, false)?;
                let att = ops::linear(&att, &sa.w_o, &sa.b_o);
                z = ops::layer_norm(&ops::add(&z, &att), &sa.ln_gain, &sa.ln_bias);
            }
            let ff = ops::linear(
                &ops::gelu(&ops::linear(&z, &blk.ffn_w1, &blk.ffn_b1)),
                &blk.ffn_w2,
                &blk.ffn_b2,
            );
            z = ops::layer_norm(&ops::add(&z, &ff), &blk.ln2_gain, &blk.ln2_bias);
        }
        let tokens = ops::linear(&z, &self.w_out, &self.b_out);
        Ok(ProjectorOutput {
            tokens: VisualTokens { tokens },
            trace: Some(trace),
        })
    }

    fn params(&self) -> Vec<(String, Tensor)> {
        let mut out = vec![
            ("w_init".to_string(), self.w_init.clone()),
            ("b_init".to_string(), self.b_init.clone()),
        ];
        for (i, blk) in self.blocks.iter().enumerate() {
            out.extend(blk.named(&format!("block{i}")));
        }
        out.push(("w_out".to_string(), self.w_out.clone()));
        out.push(("b_out".to_string(), self.b_out.clone()));
        out
    }
}
