//! Instruction formatting for multimodal training data: per-dataset prompt
//! templates, template selection with granularity and diversity controls,
//! input/target inversion, and multi-turn merging with target de-duplication.

mod error;
mod invert;
mod multiturn;
mod registry;
mod render;
mod types;

pub use error::InstructizeError;
pub use invert::invert;
pub use multiturn::merge_multiturn;
pub use registry::{builtin, builtin_coarse, builtin_fine, Registry};
pub use render::render;
pub use types::{
    normalize_target, Direction, Diversity, Granularity, InstructionExample, RawRecord, Scope,
    SlotValue, Task, Template,
};

use std::io::{BufRead, Write};

/// Read one RawRecord per JSONL line, skipping blank lines.
pub fn read_records(reader: impl BufRead) -> Result<Vec<RawRecord>, InstructizeError> {
    let mut records = Vec::new();
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        records.push(serde_json::from_str(&line)?);
    }
    Ok(records)
}

/// Write one InstructionExample per JSONL line.
pub fn write_examples(
    mut writer: impl Write,
    examples: &[InstructionExample],
) -> Result<(), InstructizeError> {
    for ex in examples {
        serde_json::to_writer(&mut writer, ex)?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}

/// Stable per-image rng stream: the run seed xor an FNV-1a hash of the
/// image id (fixed algorithm, so streams survive toolchain upgrades).
pub fn image_seed(seed: u64, image_id: &str) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in image_id.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    seed ^ h
}
