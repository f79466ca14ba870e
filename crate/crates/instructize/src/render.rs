use crate::types::{RawRecord, Template};
use crate::InstructizeError;

/// Substitute a record's slots into a template. The input is everything up
/// to and including the final "AI:"; the target is the rendered target slot.
pub fn render(template: &Template, record: &RawRecord) -> Result<(String, String), InstructizeError> {
    template.validate()?;
    record.validate()?;
    let tail = format!(" {{{}}}", template.target);
    let input_body = &template.body[..template.body.len() - tail.len()];
    let input = substitute(input_body, record)?;
    let target = record
        .slots
        .get(&template.target)
        .ok_or_else(|| InstructizeError::MissingSlot {
            slot: template.target.clone(),
            dataset: record.dataset.clone(),
        })?
        .render();
    Ok((input, target))
}

fn substitute(body: &str, record: &RawRecord) -> Result<String, InstructizeError> {
    let mut out = String::with_capacity(body.len());
    let mut rest = body;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let close = rest[open..]
            .find('}')
            .ok_or_else(|| InstructizeError::BadTemplate("unclosed placeholder".into()))?
            + open;
        let slot = &rest[open + 1..close];
        let value = record
            .slots
            .get(slot)
            .ok_or_else(|| InstructizeError::MissingSlot {
                slot: slot.to_string(),
                dataset: record.dataset.clone(),
            })?;
        out.push_str(&value.render());
        rest = &rest[close + 1..];
    }
    out.push_str(rest);
    Ok(out)
}
