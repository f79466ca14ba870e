use std::collections::HashSet;

use rand_chacha::ChaCha8Rng;

use crate::registry::Registry;
use crate::render::render;
use crate::types::{
    normalize_target, Diversity, Granularity, InstructionExample, RawRecord,
};
use crate::InstructizeError;

/// Render one image's records into a multi-turn example. Records are taken
/// in order up to `max_turns` kept turns; with `dedup`, only the first turn
/// per normalized target survives.
pub fn merge_multiturn(
    registry: &Registry,
    records: &[RawRecord],
    granularity: Granularity,
    diversity: Diversity,
    max_turns: usize,
    dedup: bool,
    rng: &mut ChaCha8Rng,
) -> Result<InstructionExample, InstructizeError> {
    let first = records.first().ok_or(InstructizeError::NoRecords)?;
    if let Some(other) = records.iter().find(|r| r.image_id != first.image_id) {
        return Err(InstructizeError::MixedImages {
            a: first.image_id.clone(),
            b: other.image_id.clone(),
        });
    }
    let mut turns = Vec::new();
    let mut provenance = Vec::new();
    let mut seen = HashSet::new();
    for (idx, record) in records.iter().enumerate() {
        if turns.len() == max_turns {
            break;
        }
        let template = registry.select_template(record, granularity, diversity, rng)?;
        let (input, target) = render(template, record)?;
        if dedup && !seen.insert(normalize_target(&target)) {
            continue;
        }
        provenance.push(if record.id.is_empty() {
            format!("{}#{}", record.dataset, idx)
        } else {
            record.id.clone()
        });
        turns.push((input, target));
    }
    Ok(InstructionExample {
        image_id: first.image_id.clone(),
        turns,
        provenance,
    })
}
