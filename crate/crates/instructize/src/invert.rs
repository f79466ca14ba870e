use crate::types::{RawRecord, Task};
use crate::InstructizeError;

/// Swap a record's input and target roles: open VQA exchanges question and
/// answer (answer-conditioned question generation); captioning exchanges the
/// caption with its auxiliary "question" slot when one exists. Applying the
/// swap twice restores the original record.
pub fn invert(record: &RawRecord) -> Result<RawRecord, InstructizeError> {
    let (a, b) = match record.task {
        Task::VqaOpen => ("question", "answer"),
        Task::Captioning => ("question", "caption"),
        task => return Err(InstructizeError::NotInvertible { task }),
    };
    let mut out = record.clone();
    let va = out.slots.remove(a).ok_or_else(|| InstructizeError::MissingSlot {
        slot: a.to_string(),
        dataset: record.dataset.clone(),
    })?;
    let vb = out.slots.remove(b).ok_or_else(|| InstructizeError::MissingSlot {
        slot: b.to_string(),
        dataset: record.dataset.clone(),
    })?;
    out.slots.insert(a.to_string(), vb);
    out.slots.insert(b.to_string(), va);
    Ok(out)
}
