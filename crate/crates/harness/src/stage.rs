use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::model::{param_checksum, CorpusItem, Model};
use crate::optim::{cosine_lr, AdamW};
use crate::HarnessError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    /// Trains the projector only; encoder and LM stay frozen.
    Pretrain,
    /// Trains projector + LM; encoder stays frozen.
    InstructionTune,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StageConfig {
    pub stage: Stage,
    pub batch_size: usize,
    pub lr: f64,
    pub min_lr: f64,
    pub warmup_steps: usize,
    pub total_steps: usize,
    #[serde(default)]
    pub weight_decay: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_eps")]
    pub eps: f64,
    #[serde(default = "default_grad_clip")]
    pub grad_clip: f64,
}

fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.98
}
fn default_eps() -> f64 {
    1e-6
}
fn default_grad_clip() -> f64 {
    1.0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LogRow {
    pub step: usize,
    pub loss: f64,
    pub lr: f64,
    pub frozen_checksum: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainingLog {
    pub rows: Vec<LogRow>,
}

impl TrainingLog {
    pub fn final_loss(&self) -> f64 {
        self.rows.last().map(|r| r.loss).unwrap_or(f64::NAN)
    }

    pub fn write_csv(&self, path: &Path) -> Result<(), HarnessError> {
        let mut f = std::fs::File::create(path)?;
        writeln!(f, "step,loss,lr,frozen_checksum")?;
        for r in &self.rows {
            writeln!(f, "{},{},{},{}", r.step, r.loss, r.lr, r.frozen_checksum)?;
        }
        Ok(())
    }
}

/// Checksum over everything the stage must leave untouched: the encoder
/// always, plus the LM during pretraining.
fn frozen_checksum(model: &Model, stage: Stage) -> f64 {
    let mut acc = model.encoder.checksum();
    if stage == Stage::Pretrain {
        acc += param_checksum(&model.lm.params());
    }
    acc
}

/// Run one training stage over a fixed corpus: seeded with-replacement
/// batches, AdamW on the stage's trainable set, warmup + cosine decay,
/// global-norm gradient clipping. Aborts on a non-finite loss.
pub fn run_stage(
    model: &mut Model,
    corpus: &[CorpusItem],
    cfg: &StageConfig,
    seed: u64,
) -> Result<TrainingLog, HarnessError> {
    if corpus.is_empty() {
        return Err(HarnessError::EmptyCorpus);
    }
    let include_lm = cfg.stage == Stage::InstructionTune;
    let params = model.trainable_params(include_lm);
    let mut opt = AdamW::new(&params, cfg.beta1, cfg.beta2, cfg.eps, cfg.weight_decay);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::with_capacity(cfg.total_steps);
    for step in 1..=cfg.total_steps {
        let batch: Vec<&CorpusItem> = (0..cfg.batch_size)
            .map(|_| &corpus[rng.gen_range(0..corpus.len())])
            .collect();
        for (_, t) in &params {
            t.zero_grad();
        }
        let loss = model.response_loss(&batch)?;
        let loss_val = loss.item();
        if !loss_val.is_finite() {
            return Err(HarnessError::NonFiniteLoss { step });
        }
        loss.backward();
        let lr = cosine_lr(cfg.lr, cfg.min_lr, cfg.warmup_steps, cfg.total_steps, step);
        opt.step(&params, lr, cfg.grad_clip);
        rows.push(LogRow {
            step,
            loss: loss_val,
            lr,
            frozen_checksum: frozen_checksum(model, cfg.stage),
        });
    }
    Ok(TrainingLog { rows })
}
