use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use tensor_core::{ops, Tensor};

use crate::HarnessError;

/// Reserved ids wrapping the visual span when image indicators are on.
pub const IMG_START: usize = 0;
pub const IMG_END: usize = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LmConfig {
    pub vocab: usize,
    pub d_t: usize,
    pub depth: usize,
    pub heads: usize,
    pub max_seq: usize,
}

impl LmConfig {
    pub fn toy() -> LmConfig {
        LmConfig {
            vocab: 256,
            d_t: 64,
            depth: 2,
            heads: 4,
            max_seq: 512,
        }
    }
}

struct LmBlock {
    ln1_gain: Tensor,
    ln1_bias: Tensor,
    w_q: Tensor,
    b_q: Tensor,
    w_k: Tensor,
    w_v: Tensor,
    b_v: Tensor,
    w_o: Tensor,
    b_o: Tensor,
    ln2_gain: Tensor,
    ln2_bias: Tensor,
    ffn_w1: Tensor,
    ffn_b1: Tensor,
    ffn_w2: Tensor,
    ffn_b2: Tensor,
}

fn init_weight(rng: &mut ChaCha8Rng, dout: usize, din: usize) -> Tensor {
    let scale = 1.0 / (din as f64).sqrt();
    let data = (0..dout * din).map(|_| rng.gen_range(-scale..scale)).collect();
    Tensor::param(&[dout, din], data)
}

fn zeros(d: usize) -> Tensor {
    Tensor::param(&[d], vec![0.0; d])
}

fn ones(d: usize) -> Tensor {
    Tensor::param(&[d], vec![1.0; d])
}

impl LmBlock {
    fn new(rng: &mut ChaCha8Rng, d: usize) -> LmBlock {
        let f = 4 * d;
        LmBlock {
            ln1_gain: ones(d),
            ln1_bias: zeros(d),
            w_q: init_weight(rng, d, d),
            b_q: zeros(d),
            w_k: init_weight(rng, d, d),
            w_v: init_weight(rng, d, d),
            b_v: zeros(d),
            w_o: init_weight(rng, d, d),
            b_o: zeros(d),
            ln2_gain: ones(d),
            ln2_bias: zeros(d),
            ffn_w1: init_weight(rng, f, d),
            ffn_b1: zeros(f),
            ffn_w2: init_weight(rng, d, f),
            ffn_b2: zeros(d),
        }
    }

    fn named(&self, prefix: &str) -> Vec<(String, Tensor)> {
        [
            ("ln1_gain", &self.ln1_gain),
            ("ln1_bias", &self.ln1_bias),
            ("w_q", &self.w_q),
            ("b_q", &self.b_q),
            ("w_k", &self.w_k),
            ("w_v", &self.w_v),
            ("b_v", &self.b_v),
            ("w_o", &self.w_o),
            ("b_o", &self.b_o),
            ("ln2_gain", &self.ln2_gain),
            ("ln2_bias", &self.ln2_bias),
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

/// Small causal decoder over [visual tokens || text tokens], pre-norm
/// residual blocks, token + position embeddings, projection to the vocab.
pub struct TinyLM {
    cfg: LmConfig,
    tok_emb: Tensor,
    pos_emb: Tensor,
    blocks: Vec<LmBlock>,
    lnf_gain: Tensor,
    lnf_bias: Tensor,
    w_out: Tensor,
    b_out: Tensor,
}

impl TinyLM {
    pub fn new(cfg: LmConfig, rng: &mut ChaCha8Rng) -> TinyLM {
        assert!(cfg.vocab > 2, "vocab must hold the two reserved indicator ids");
        let d = cfg.d_t;
        let emb = |rng: &mut ChaCha8Rng, n: usize| {
            let data = (0..n * d).map(|_| rng.gen_range(-0.02..0.02)).collect();
            Tensor::param(&[n, d], data)
        };
        TinyLM {
            tok_emb: emb(rng, cfg.vocab),
            pos_emb: emb(rng, cfg.max_seq),
            blocks: (0..cfg.depth).map(|_| LmBlock::new(rng, d)).collect(),
            lnf_gain: ones(d),
            lnf_bias: zeros(d),
            w_out: init_weight(rng, cfg.vocab, d),
            b_out: zeros(cfg.vocab),
            cfg,
        }
    }

    pub fn config(&self) -> &LmConfig {
        &self.cfg
    }

    /// Byte tokenizer: ids 0 and 1 stay reserved for the image indicators;
    /// byte b maps to 2 + (b mod (V-2)).
    pub fn tokenize(&self, text: &str) -> Vec<usize> {
        let v = self.cfg.vocab;
        text.bytes().map(|b| 2 + (b as usize % (v - 2))).collect()
    }

    /// Next-token logits [S, V] for an optional visual prefix followed by
    /// text ids. With `indicator`, the visual span is wrapped in the two
    /// reserved tokens (sequence grows by exactly 2).
    pub fn forward(
        &self,
        visual: Option<&Tensor>,
        text_ids: &[usize],
        indicator: bool,
    ) -> Result<Tensor, HarnessError> {
        let mut rows: Option<Tensor> = None;
        let mut push = |t: Tensor| {
            rows = Some(match rows.take() {
                Some(acc) => ops::concat_rows(&acc, &t),
                None => t,
            });
        };
        if let Some(vis) = visual {
            if vis.shape()[1] != self.cfg.d_t {
                return Err(HarnessError::DimensionMismatch(format!(
                    "visual tokens are {} wide, the LM expects {}",
                    vis.shape()[1],
                    self.cfg.d_t
                )));
            }
            if indicator {
                push(ops::embedding(&self.tok_emb, &[IMG_START]));
            }
            push(vis.clone());
            if indicator {
                push(ops::embedding(&self.tok_emb, &[IMG_END]));
            }
        }
        if !text_ids.is_empty() {
            push(ops::embedding(&self.tok_emb, text_ids));
        }
        let mut h = rows.ok_or(HarnessError::EmptyResponse)?;
        let s = h.shape()[0];
        assert!(s <= self.cfg.max_seq, "sequence length {s} exceeds max_seq");
        h = ops::add(&h, &ops::slice_rows(&self.pos_emb, 0, s));
        for blk in &self.blocks {
            let n = ops::layer_norm(&h, &blk.ln1_gain, &blk.ln1_bias);
            let q = ops::linear(&n, &blk.w_q, &blk.b_q);
            let k = ops::matmul(&n, &ops::transpose(&blk.w_k));
            let v = ops::linear(&n, &blk.w_v, &blk.b_v);
            let (att, _) = ops::multi_head_attention(&q, &k, &v, self.cfg.heads, true)?;
            h = ops::add(&h, &ops::linear(&att, &blk.w_o, &blk.b_o));
            let n = ops::layer_norm(&h, &blk.ln2_gain, &blk.ln2_bias);
            let ff = ops::linear(
                &ops::gelu(&ops::linear(&n, &blk.ffn_w1, &blk.ffn_b1)),
                &blk.ffn_w2,
                &blk.ffn_b2,
            );
            h = ops::add(&h, &ff);
        }
        let h = ops::layer_norm(&h, &self.lnf_gain, &self.lnf_bias);
        Ok(ops::linear(&h, &self.w_out, &self.b_out))
    }

    pub fn params(&self) -> Vec<(String, Tensor)> {
        let mut out = vec![
            ("tok_emb".to_string(), self.tok_emb.clone()),
            ("pos_emb".to_string(), self.pos_emb.clone()),
        ];
        for (i, blk) in self.blocks.iter().enumerate() {
            out.extend(blk.named(&format!("block{i}")));
        }
        out.push(("lnf_gain".to_string(), self.lnf_gain.clone()));
        out.push(("lnf_bias".to_string(), self.lnf_bias.clone()));
        out.push(("w_out".to_string(), self.w_out.clone()));
        out.push(("b_out".to_string(), self.b_out.clone()));
        out
    }
}
