use rand_chacha::ChaCha8Rng;
use tensor_core::{ops, Tensor};

use crate::types::{AttentionTrace, FeatureMap, ProjectorOutput, ProjectorSpec, VisualTokens};
use crate::{init_bias, init_tensor, init_weight, Projector, ProjectorError};

struct CrossBlock {
    ln_q_gain: Tensor,
    ln_q_bias: Tensor,
    w_q: Tensor,
    b_q: Tensor,
    w_k: Tensor,
    w_v: Tensor,
    b_v: Tensor,
    w_o: Tensor,
    b_o: Tensor,
    ln_f_gain: Tensor,
    ln_f_bias: Tensor,
    ffn_w1: Tensor,
    ffn_b1: Tensor,
    ffn_w2: Tensor,
    ffn_b2: Tensor,
}

impl CrossBlock {
    fn new(rng: &mut ChaCha8Rng, d: usize) -> CrossBlock {
        let f = 4 * d;
        CrossBlock {
            ln_q_gain: Tensor::param(&[d], vec![1.0; d]),
            ln_q_bias: init_bias(d),
            w_q: init_weight(rng, d, d),
            b_q: init_bias(d),
            w_k: init_weight(rng, d, d),
            w_v: init_weight(rng, d, d),
            b_v: init_bias(d),
            w_o: init_weight(rng, d, d),
            b_o: init_bias(d),
            ln_f_gain: Tensor::param(&[d], vec![1.0; d]),
            ln_f_bias: init_bias(d),
            ffn_w1: init_weight(rng, f, d),
            ffn_b1: init_bias(f),
            ffn_w2: init_weight(rng, d, f),
            ffn_b2: init_bias(d),
        }
    }

    fn named(&self, prefix: &str) -> Vec<(String, Tensor)> {
        [
            ("ln_q_gain", &self.ln_q_gain),
            ("ln_q_bias", &self.ln_q_bias),
            ("w_q", &self.w_q),
            ("b_q", &self.b_q),
            ("w_k", &self.w_k),
            ("w_v", &self.w_v),
            ("b_v", &self.b_v),
            ("w_o", &self.w_o),
            ("b_o", &self.b_o),
            ("ln_f_gain", &self.ln_f_gain),
            ("ln_f_bias", &self.ln_f_bias),
            ("ffn_w1", &self.ffn_w1),
            ("ffn_b1", &self.ffn_b1),
            ("ffn_w2", &self.ffn_w2),
            ("ffn_b2", &self.ffn_b2),
        ]
        .into_iter()
        .map(|(n, t)| (format!("{prefix}.{n}"), t.clone()))
        .collect()
    }
}

/// M learnable queries attending over all N features through blocks of
/// [cross-attention -> feed-forward], pre-norm residuals. M is arbitrary.
pub struct Resampler {
    spec: ProjectorSpec,
    queries: Tensor,
    w_in: Tensor,
    b_in: Tensor,
    pos_table: Option<Tensor>,
    blocks: Vec<CrossBlock>,
    w_out: Tensor,
    b_out: Tensor,
}

impl Resampler {
    pub fn new(spec: ProjectorSpec, rng: &mut ChaCha8Rng) -> Result<Resampler, ProjectorError> {
        let d = spec.d_t;
        let pos_table = if spec.pos_emb {
            let n = spec.num_features.ok_or(ProjectorError::MissingFeatureCount)?;
            Some(init_tensor(rng, &[n, d], 0.02))
        } else {
            None
        };
        let blocks = (0..spec.resampler_layers)
            .map(|_| CrossBlock::new(rng, d))
            .collect();
        Ok(Resampler {
            queries: init_tensor(rng, &[spec.num_tokens, d], 0.02),
            w_in: init_weight(rng, d, spec.d_v),
            b_in: init_bias(d),
            pos_table,
            blocks,
            w_out: init_weight(rng, spec.d_t, d),
            b_out: init_bias(spec.d_t),
            spec,
        })
    }
}

impl Projector for Resampler {
    fn spec(&self) -> &ProjectorSpec {
        &self.spec
    }

    fn forward(&self, fm: &FeatureMap) -> Result<ProjectorOutput, ProjectorError> {
        let (h, w) = fm.grid;
        let m = self.spec.num_tokens;
        let heads = self.spec.heads;
        let mut feat = ops::linear(&fm.features, &self.w_in, &self.b_in);
        if let Some(pos) = &self.pos_table {
            if pos.shape()[0] != fm.len() {
                return Err(ProjectorError::FeatureCountMismatch {
                    expected: pos.shape()[0],
                    got: fm.len(),
                });
            }
            feat = ops::add(&feat, pos);
        }
        let mut trace = AttentionTrace::zeros(self.blocks.len(), m, (h, w));
        let mut z = self.queries.clone();
        for (li, blk) in self.blocks.iter().enumerate() {
            let qn = ops::layer_norm(&z, &blk.ln_q_gain, &blk.ln_q_bias);
            let q = ops::linear(&qn, &blk.w_q, &blk.b_q);
            // No key bias: a shared key offset cancels inside the softmax.
            let k = ops::matmul(&feat, &ops::transpose(&blk.w_k));
            let v = ops::linear(&feat, &blk.w_v, &blk.b_v);
            let (att, probs) = ops::multi_head_attention(&q, &k, &v, heads, false)?;
            // Head-averaged attention mass per query over the grid.
            let n = fm.len();
            for qi in 0..m {
                let slice = trace.slice_mut(li, qi);
                for hd in 0..heads {
                    for ni in 0..n {
                        slice[ni] += probs[(hd * m + qi) * n + ni] / heads as f64;
                    }
                }
            }
            z = ops::add(&z, &ops::linear(&att, &blk.w_o, &blk.b_o));
            let zn = ops::layer_norm(&z, &blk.ln_f_gain, &blk.ln_f_bias);
            let ff = ops::linear(&ops::gelu(&ops::linear(&zn, &blk.ffn_w1, &blk.ffn_b1)), &blk.ffn_w2, &blk.ffn_b2);
            z = ops::add(&z, &ff);
        }
        let tokens = ops::linear(&z, &self.w_out, &self.b_out);
        Ok(ProjectorOutput {
            tokens: VisualTokens { tokens },
            trace: Some(trace),
        })
    }

    fn params(&self) -> Vec<(String, Tensor)> {
        let mut out = vec![
            ("queries".to_string(), self.queries.clone()),
            ("w_in".to_string(), self.w_in.clone()),
            ("b_in".to_string(), self.b_in.clone()),
        ];
        if let Some(p) = &self.pos_table {
            out.push(("pos_table".to_string(), p.clone()));
        }
        for (i, blk) in self.blocks.iter().enumerate() {
            out.extend(blk.named(&format!("block{i}")));
        }
        out.push(("w_out".to_string(), self.w_out.clone()));
        out.push(("b_out".to_string(), self.b_out.clone()));
        out
    }
}
