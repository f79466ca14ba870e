use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use tensor_core::{ops, Tensor};

use projectors::{Projector, ProjectorSpec};

use crate::encoder::{EncoderConfig, StubVisionEncoder};
use crate::lm::{LmConfig, TinyLM};
use crate::HarnessError;

/// One training sample: an image paired with an instruction-formatted input
/// (everything up to and including the final "AI:") and the response to
/// predict.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorpusItem {
    pub image_id: String,
    pub input: String,
    pub response: String,
    #[serde(default)]
    pub dataset: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub projector: ProjectorSpec,
    pub lm: LmConfig,
    #[serde(default)]
    pub image_indicator: bool,
}

pub struct Model {
    pub encoder: StubVisionEncoder,
    pub projector: Box<dyn Projector>,
    pub lm: TinyLM,
    pub image_indicator: bool,
}

/// Build encoder + projector + LM, checking the shared widths.
pub fn assemble(cfg: &ModelConfig, seed: u64) -> Result<Model, HarnessError> {
    if cfg.projector.d_v != cfg.encoder.d_v {
        return Err(HarnessError::DimensionMismatch(format!(
            "projector reads {}-wide features, encoder emits {}",
            cfg.projector.d_v, cfg.encoder.d_v
        )));
    }
    if cfg.projector.d_t != cfg.lm.d_t {
        return Err(HarnessError::DimensionMismatch(format!(
            "projector writes {}-wide tokens, LM expects {}",
            cfg.projector.d_t, cfg.lm.d_t
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let projector = projectors::build(&cfg.projector, &mut rng)?;
    let lm = TinyLM::new(cfg.lm.clone(), &mut rng);
    Ok(Model {
        encoder: StubVisionEncoder::new(cfg.encoder.clone()),
        projector,
        lm,
        image_indicator: cfg.image_indicator,
    })
}

impl Model {
    /// Length of the visual span as the LM sees it.
    pub fn visual_span(&self) -> usize {
        self.projector.spec().num_tokens + if self.image_indicator { 2 } else { 0 }
    }

    /// Logits over the full sequence for one item, plus the per-position
    /// target mask covering exactly the response span.
    pub fn item_logits(&self, item: &CorpusItem) -> Result<(Tensor, Vec<Option<usize>>), HarnessError> {
        if item.response.is_empty() {
            return Err(HarnessError::EmptyResponse);
        }
        let fm = self.encoder.features(&item.image_id);
        let visual = self.projector.forward(&fm)?.tokens.tokens;
        let input_ids = self.lm.tokenize(&item.input);
        let resp_ids = self.lm.tokenize(&item.response);
        let mut text_ids = input_ids.clone();
        text_ids.extend(&resp_ids);
        let logits = self.lm.forward(Some(&visual), &text_ids, self.image_indicator)?;
        let s = logits.shape()[0];
        let vis = self.visual_span();
        // Row j predicts sequence position j+1; response tokens start at
        // sequence position vis + input_len.
        let mut targets = vec![None; s];
        for (i, &id) in resp_ids.iter().enumerate() {
            targets[vis + input_ids.len() + i - 1] = Some(id);
        }
        Ok((logits, targets))
    }

    /// Eq-style response loss: mean NLL over response positions only, the
    /// input span fully masked; averaged over the batch.
    pub fn response_loss(&self, batch: &[&CorpusItem]) -> Result<Tensor, HarnessError> {
        if batch.is_empty() {
            return Err(HarnessError::EmptyCorpus);
        }
        let mut total: Option<Tensor> = None;
        for item in batch {
            let (logits, targets) = self.item_logits(item)?;
            let loss = ops::masked_cross_entropy(&logits, &targets);
            total = Some(match total {
                Some(acc) => ops::add(&acc, &loss),
                None => loss,
            });
        }
        Ok(ops::scale(&total.expect("nonempty batch"), 1.0 / batch.len() as f64))
    }

    pub fn trainable_params(&self, include_lm: bool) -> Vec<(String, Tensor)> {
        let mut params: Vec<(String, Tensor)> = self
            .projector
            .params()
            .into_iter()
            .map(|(n, t)| (format!("projector.{n}"), t))
            .collect();
        if include_lm {
            params.extend(self.lm.params().into_iter().map(|(n, t)| (format!("lm.{n}"), t)));
        }
        params
    }
}

/// Position-weighted checksum over parameter values; moves if any entry
/// changes.
pub fn param_checksum(params: &[(String, Tensor)]) -> f64 {
    let mut acc = 0.0;
    let mut offset = 0usize;
    for (_, t) in params {
        for (i, v) in t.to_vec().iter().enumerate() {
            acc += v * ((offset + i + 1) as f64).sqrt();
        }
        offset += t.numel();
    }
    acc
}
