//! Dataset mixture balancing: resolve a mixture spec into per-dataset
//! sampling probabilities under four strategies, stream reproducible
//! sampling decisions, and report expected epochs per dataset.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MixerError {
    #[error("mixture needs at least one entry")]
    Empty,
    #[error("dataset {0:?} has size 0; sizes must be positive")]
    ZeroSize(String),
    #[error("strategy per_dataset_tuned needs a hand weight for {0:?}")]
    MissingWeight(String),
    #[error("hand weights must be nonnegative with a positive sum")]
    BadWeights,
    #[error("dataset names must be unique; {0:?} repeats")]
    DuplicateDataset(String),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MixtureEntry {
    pub dataset: String,
    pub task: String,
    pub size: u64,
    /// Hand-tuned weight, required by per_dataset_tuned only.
    #[serde(default)]
    pub weight: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    /// Uniform over datasets.
    PerDataset,
    /// Uniform over tasks, then uniform over the task's datasets.
    PerTask,
    /// Proportional to dataset size clipped at `clip`.
    PerSample100k,
    /// Hand weights normalized to sum 1.
    PerDatasetTuned,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MixtureSpec {
    pub entries: Vec<MixtureEntry>,
    pub strategy: Strategy,
    #[serde(default = "default_clip")]
    pub clip: u64,
}

fn default_clip() -> u64 {
    100_000
}

/// Per-dataset sampling probabilities, in entry order, summing to 1.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MixtureTable {
    pub entries: Vec<(String, f64)>,
}

impl MixtureTable {
    pub fn probability(&self, dataset: &str) -> f64 {
        self.entries
            .iter()
            .find(|(d, _)| d == dataset)
            .map_or(0.0, |(_, p)| *p)
    }
}

pub fn resolve(spec: &MixtureSpec) -> Result<MixtureTable, MixerError> {
    if spec.entries.is_empty() {
        return Err(MixerError::Empty);
    }
    for (i, e) in spec.entries.iter().enumerate() {
        if e.size == 0 {
            return Err(MixerError::ZeroSize(e.dataset.clone()));
        }
        if spec.entries[..i].iter().any(|o| o.dataset == e.dataset) {
            return Err(MixerError::DuplicateDataset(e.dataset.clone()));
        }
    }
    let raw: Vec<f64> = match spec.strategy {
        Strategy::PerDataset => vec![1.0; spec.entries.len()],
        Strategy::PerTask => {
            let mut tasks: Vec<&str> = Vec::new();
            for e in &spec.entries {
                if !tasks.contains(&e.task.as_str()) {
                    tasks.push(&e.task);
                }
            }
            spec.entries
                .iter()
                .map(|e| {
                    let in_task =
                        spec.entries.iter().filter(|o| o.task == e.task).count() as f64;
                    1.0 / (tasks.len() as f64 * in_task)
                })
                .collect()
        }
        Strategy::PerSample100k => spec
            .entries
            .iter()
            .map(|e| e.size.min(spec.clip) as f64)
            .collect(),
        Strategy::PerDatasetTuned => {
            let mut weights = Vec::with_capacity(spec.entries.len());
            for e in &spec.entries {
                let w = e
                    .weight
                    .ok_or_else(|| MixerError::MissingWeight(e.dataset.clone()))?;
                if !(w >= 0.0) {
                    return Err(MixerError::BadWeights);
                }
                weights.push(w);
            }
            if weights.iter().sum::<f64>() <= 0.0 {
                return Err(MixerError::BadWeights);
            }
            weights
        }
    };
    let total: f64 = raw.iter().sum();
    Ok(MixtureTable {
        entries: spec
            .entries
            .iter()
            .zip(&raw)
            .map(|(e, w)| (e.dataset.clone(), w / total))
            .collect(),
    })
}

/// The hand-tuned instruction mixture percentages as published, renormalized
/// to probabilities (ratios preserved).
pub fn published_tuned_mixture() -> MixtureSpec {
    let rows: [(&str, &str, u64, f64); 13] = [
        ("vqav2", "vqa_open", 443_757, 10.3),
        ("gqa", "vqa_open", 943_000, 10.3),
        ("ocrvqa", "vqa_open", 1_002_146, 5.1),
        ("vsr", "vqa_open", 7_680, 2.6),
        ("scienceqa", "vqa_mc", 12_726, 5.1),
        ("aokvqa", "vqa_mc", 17_056, 10.3),
        ("coyo100m", "captioning", 100_000_000, 7.7),
        ("refcoco", "rec", 120_624, 10.3),
        ("refcoco+", "rec", 120_191, 10.3),
        ("refcocog", "rec", 80_512, 10.3),
        ("vg", "rec", 3_802_374, 5.1),
        ("llava150k", "instruction", 157_712, 10.3),
        ("sharegpt", "instruction", 90_000, 2.6),
    ];
    MixtureSpec {
        entries: rows
            .iter()
            .map(|&(dataset, task, size, weight)| MixtureEntry {
                dataset: dataset.into(),
                task: task.into(),
                size,
                weight: Some(weight),
            })
            .collect(),
        strategy: Strategy::PerDatasetTuned,
        clip: default_clip(),
    }
}

/// Reproducible i.i.d. categorical draws from the table.
pub struct SampleStream {
    entries: Vec<(String, f64)>,
    rng: ChaCha8Rng,
    remaining: u64,
}

impl Iterator for SampleStream {
    type Item = String;

    fn next(&mut self) -> Option<String> {
        if self.remaining == 0 {
            return None;
        }
        self.remaining -= 1;
        let mut u: f64 = self.rng.gen();
        for (name, p) in &self.entries {
            if u < *p {
                return Some(name.clone());
            }
            u -= p;
        }
        // Rounding remainder lands on the last entry.
        Some(self.entries.last().expect("nonempty table").0.clone())
    }
}

pub fn sample_stream(table: &MixtureTable, seed: u64, n: u64) -> SampleStream {
    SampleStream {
        entries: table.entries.clone(),
        rng: ChaCha8Rng::seed_from_u64(seed),
        remaining: n,
    }
}

/// Expected passes over each dataset after n draws: n * p / size.
pub fn epochs_report(table: &MixtureTable, n: u64, sizes: &[(String, u64)]) -> Vec<(String, f64)> {
    sizes
        .iter()
        .map(|(name, size)| {
            (
                name.clone(),
                n as f64 * table.probability(name) / *size as f64,
            )
        })
        .collect()
}
