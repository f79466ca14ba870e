use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use harness::{
    assemble, avg_n, ckpt, evaluate_probe, profile_step, run_stage, BenchScores, CorpusItem,
    HarnessError, LmConfig, ModelConfig, ProbeItem, Stage, StageConfig,
};
use mixer::{sample_stream, MixtureSpec};

#[derive(Parser)]
#[command(name = "harness", about = "Two-stage training, profiling, and metrics")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Stage 1: train the projector only.
    Pretrain(TrainArgs),
    /// Stage 2: train projector + LM.
    Finetune(TrainArgs),
    /// Analytic FLOPs and median step time for a projector spec.
    Profile {
        /// Projector spec JSON file.
        #[arg(long)]
        spec: PathBuf,
        /// Override the spec's output token count.
        #[arg(long = "M")]
        m: Option<usize>,
        #[arg(long, default_value_t = 64)]
        text_len: usize,
    },
    /// Normalized average over bounded benchmark scores.
    Avgn {
        #[arg(long)]
        scores: PathBuf,
    },
    /// Multiple-choice probe accuracy for a saved model.
    Probe {
        #[arg(long)]
        ckpt: PathBuf,
        /// Probe set JSON (list of items).
        #[arg(long)]
        set: PathBuf,
    },
}

#[derive(clap::Args)]
struct TrainArgs {
    /// JSON with {model: ModelConfig, stage: StageConfig}.
    #[arg(long)]
    config: PathBuf,
    /// Optional mixture spec; reweights corpus sampling by dataset.
    #[arg(long)]
    mixture: Option<PathBuf>,
    /// Corpus JSONL of {image_id, input, response, dataset}.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output checkpoint path; the log goes next to it as <out>.log.csv.
    #[arg(long)]
    out: PathBuf,
    /// Resume weights from an existing checkpoint.
    #[arg(long)]
    init: Option<PathBuf>,
}

#[derive(serde::Deserialize)]
struct TrainFile {
    model: ModelConfig,
    stage: StageConfig,
}

fn read_corpus(path: &PathBuf) -> Result<Vec<CorpusItem>, HarnessError> {
    let text = std::fs::read_to_string(path)?;
    let mut out = Vec::new();
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        out.push(serde_json::from_str(line)?);
    }
    Ok(out)
}

/// Expand the corpus into a mixture-weighted sampling pool: draw dataset
/// names from the stream, then walk each dataset's records in order.
fn apply_mixture(
    corpus: Vec<CorpusItem>,
    spec: &MixtureSpec,
    seed: u64,
    n: usize,
) -> Result<Vec<CorpusItem>, HarnessError> {
    let table = mixer::resolve(spec)?;
    let names = sample_stream(&table, seed, n as u64);
    let mut by_dataset: std::collections::HashMap<&str, Vec<&CorpusItem>> =
        std::collections::HashMap::new();
    for item in &corpus {
        by_dataset.entry(item.dataset.as_str()).or_default().push(item);
    }
    let mut cursors: std::collections::HashMap<String, usize> = std::collections::HashMap::new();
    let mut out = Vec::with_capacity(n);
    for name in names {
        if let Some(records) = by_dataset.get(name.as_str()) {
            let c = cursors.entry(name.clone()).or_insert(0);
            out.push(records[*c % records.len()].clone());
            *c += 1;
        }
    }
    if out.is_empty() {
        return Err(HarnessError::EmptyCorpus);
    }
    Ok(out)
}

fn train(stage: Stage, args: &TrainArgs) -> Result<(), HarnessError> {
    let file: TrainFile = serde_json::from_str(&std::fs::read_to_string(&args.config)?)?;
    let mut cfg = file.stage.clone();
    cfg.stage = stage;
    let mut model = match &args.init {
        Some(path) => ckpt::load_model(path)?.0,
        None => assemble(&file.model, args.seed)?,
    };
    let mut corpus = read_corpus(&args.data)?;
    if let Some(mix_path) = &args.mixture {
        let spec: MixtureSpec = serde_json::from_str(&std::fs::read_to_string(mix_path)?)?;
        let pool = (cfg.total_steps * cfg.batch_size).max(corpus.len());
        corpus = apply_mixture(corpus, &spec, args.seed, pool)?;
    }
    let log = run_stage(&mut model, &corpus, &cfg, args.seed)?;
    ckpt::save_model(&model, &file.model, &args.out)?;
    let mut log_path = args.out.clone();
    log_path.set_extension("log.csv");
    log.write_csv(&log_path)?;
    println!(
        "trained {} steps, final loss {:.6}, checkpoint {}",
        cfg.total_steps,
        log.final_loss(),
        args.out.display()
    );
    Ok(())
}

fn run() -> Result<(), HarnessError> {
    match Cli::parse().cmd {
        Cmd::Pretrain(args) => train(Stage::Pretrain, &args),
        Cmd::Finetune(args) => train(Stage::InstructionTune, &args),
        Cmd::Profile { spec, m, text_len } => {
            let mut spec: projectors::ProjectorSpec =
                serde_json::from_str(&std::fs::read_to_string(spec)?)?;
            if let Some(m) = m {
                spec.num_tokens = m;
            }
            let n = spec.num_features.unwrap_or(256);
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            // Build once up front so invalid specs fail before timing.
            projectors::build(&spec, &mut rng)?;
            let report = profile_step(&spec, &LmConfig::toy(), n, text_len, 5)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
            Ok(())
        }
        Cmd::Avgn { scores } => {
            let scores = BenchScores::load(&scores)?;
            println!("{:.4}", avg_n(&scores)?);
            Ok(())
        }
        Cmd::Probe { ckpt: ckpt_path, set } => {
            let (model, _) = ckpt::load_model(&ckpt_path)?;
            let items: Vec<ProbeItem> = serde_json::from_str(&std::fs::read_to_string(set)?)?;
            let scores = evaluate_probe(&model, &items)?;
            println!("{}", serde_json::to_string_pretty(&scores)?);
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
