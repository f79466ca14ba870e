use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use instructize::{
    builtin, image_seed, merge_multiturn, read_records, write_examples, Diversity, Granularity,
    InstructionExample, RawRecord, Registry,
};

/// Convert raw task records (JSONL) into instruction-formatted examples.
#[derive(Parser)]
struct Args {
    /// Input JSONL of raw records.
    #[arg(long = "in")]
    input: PathBuf,
    /// Output JSONL of instruction examples.
    #[arg(long = "out")]
    output: PathBuf,
    #[arg(long, value_enum, default_value = "fine")]
    granularity: Granularity,
    #[arg(long, value_enum, default_value = "single")]
    diversity: Diversity,
    /// Max turns per example; 1 keeps every record as its own example.
    #[arg(long = "multi-turn", default_value_t = 1)]
    multi_turn: usize,
    /// Drop turns whose normalized target repeats within an example.
    #[arg(long)]
    dedup: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Optional template registry (JSON array) replacing the built-ins.
    #[arg(long)]
    templates: Option<PathBuf>,
}

fn main() -> ExitCode {
    let args = Args::parse();
    match run(&args) {
        Ok(n) => {
            eprintln!("wrote {n} examples to {}", args.output.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("instructize: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run(args: &Args) -> Result<usize, Box<dyn std::error::Error>> {
    let registry = match &args.templates {
        Some(path) => Registry::from_json(&std::fs::read_to_string(path)?)?,
        None => builtin(),
    };
    let records = read_records(BufReader::new(File::open(&args.input)?))?;

    // Group per (image, dataset) preserving input order; one example stays
    // within one dataset.
    let mut groups: Vec<((String, String), Vec<RawRecord>)> = Vec::new();
    for rec in records {
        let key = (rec.image_id.clone(), rec.dataset.clone());
        match groups.iter_mut().find(|(k, _)| *k == key) {
            Some((_, v)) => v.push(rec),
            None => groups.push((key, vec![rec])),
        }
    }

    let mut examples: Vec<InstructionExample> = Vec::new();
    for ((image_id, _), group) in &groups {
        let mut rng = ChaCha8Rng::seed_from_u64(image_seed(args.seed, image_id));
        if args.multi_turn <= 1 {
            for rec in group {
                examples.push(merge_multiturn(
                    &registry,
                    std::slice::from_ref(rec),
                    args.granularity,
                    args.diversity,
                    1,
                    args.dedup,
                    &mut rng,
                )?);
            }
        } else {
            examples.push(merge_multiturn(
                &registry,
                group,
                args.granularity,
                args.diversity,
                args.multi_turn,
                args.dedup,
                &mut rng,
            )?);
        }
    }
    write_examples(BufWriter::new(File::create(&args.output)?), &examples)?;
    Ok(examples.len())
}
