use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::HarnessError;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScoreEntry {
    pub name: String,
    pub score: f64,
    pub bound: Option<f64>,
}

/// Named benchmark scores, each with the benchmark's own upper bound
/// (e.g. 100 for accuracy-style sets, 2000 for additive perception suites,
/// 200 per subtask of those suites).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchScores {
    pub entries: Vec<ScoreEntry>,
}

impl BenchScores {
    pub fn new(entries: Vec<(&str, f64, f64)>) -> BenchScores {
        BenchScores {
            entries: entries
                .into_iter()
                .map(|(name, score, bound)| ScoreEntry {
                    name: name.to_string(),
                    score,
                    bound: Some(bound),
                })
                .collect(),
        }
    }

    pub fn load(path: &Path) -> Result<BenchScores, HarnessError> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

/// Normalized average: 100 x mean(score_i / bound_i). Every entry must
/// carry a bound and sit inside [0, bound].
pub fn avg_n(scores: &BenchScores) -> Result<f64, HarnessError> {
    if scores.entries.is_empty() {
        return Err(HarnessError::EmptyCorpus);
    }
    let mut acc = 0.0;
    for e in &scores.entries {
        let bound = e.bound.ok_or_else(|| HarnessError::MissingBound {
            name: e.name.clone(),
        })?;
        if !(0.0..=bound).contains(&e.score) {
            return Err(HarnessError::ScoreOutOfRange {
                name: e.name.clone(),
                score: e.score,
                bound,
            });
        }
        acc += e.score / bound;
    }
    Ok(100.0 * acc / scores.entries.len() as f64)
}
