use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::metrics::BenchScores;
use crate::model::{CorpusItem, Model};
use crate::HarnessError;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProbeItem {
    pub image_id: String,
    pub question: String,
    pub options: Vec<String>,
    /// Index into `options`.
    pub answer: usize,
}

/// Sum of log p over the response span: the comparable per-option sequence
/// likelihood (input span identical across options).
fn option_log_likelihood(model: &Model, item: &CorpusItem) -> Result<f64, HarnessError> {
    let (logits, targets) = model.item_logits(item)?;
    let n_active = targets.iter().filter(|t| t.is_some()).count();
    let mean_nll = tensor_core::ops::masked_cross_entropy(&logits, &targets).item();
    Ok(-mean_nll * n_active as f64)
}

/// Multiple-choice scoring: pick the option whose full sequence the model
/// assigns the highest likelihood. Deterministic given weights.
pub fn evaluate_probe(model: &Model, items: &[ProbeItem]) -> Result<BenchScores, HarnessError> {
    if items.is_empty() || items.iter().any(|i| i.options.len() < 2) {
        return Err(HarnessError::EmptyProbe);
    }
    let mut correct = 0usize;
    for item in items {
        assert!(item.answer < item.options.len(), "answer index out of range");
        let mut best = (f64::NEG_INFINITY, 0usize);
        for (oi, option) in item.options.iter().enumerate() {
            let ci = CorpusItem {
                image_id: item.image_id.clone(),
                input: format!("Human: {} AI: ", item.question),
                response: option.clone(),
                dataset: String::new(),
            };
            let ll = option_log_likelihood(model, &ci)?;
            if ll > best.0 {
                best = (ll, oi);
            }
        }
        if best.1 == item.answer {
            correct += 1;
        }
    }
    let acc = 100.0 * correct as f64 / items.len() as f64;
    Ok(BenchScores::new(vec![("probe_accuracy", acc, 100.0)]))
}

/// Synthetic n-way probe with uniformly placed answers; option strings are
/// short distinct words so sequence likelihoods differ.
pub fn synthetic_probe(n_items: usize, n_options: usize, seed: u64) -> Vec<ProbeItem> {
    let words = [
        "red", "blue", "green", "gold", "round", "flat", "tall", "small", "left", "right",
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n_items)
        .map(|i| {
            let mut opts: Vec<String> = Vec::with_capacity(n_options);
            let start = rng.gen_range(0..words.len());
            for j in 0..n_options {
                opts.push(words[(start + j) % words.len()].to_string());
            }
            ProbeItem {
                image_id: format!("probe-{i}"),
                question: format!("What best describes object {i}?"),
                options: opts,
                answer: rng.gen_range(0..n_options),
            }
        })
        .collect()
}
