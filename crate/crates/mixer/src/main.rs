use std::fs::File;
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use mixer::{resolve, sample_stream, MixtureSpec};

/// Resolve dataset mixtures and stream reproducible sampling decisions.
#[derive(Parser)]
struct Args {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Resolve a mixture spec into per-dataset probabilities (CSV).
    Resolve {
        #[arg(long)]
        spec: PathBuf,
        /// Output CSV path; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print n seeded dataset draws, one per line.
    Stream {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        n: u64,
    },
}

fn main() -> ExitCode {
    match run(&Args::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("mixer: {e}");
            ExitCode::FAILURE
        }
    }
}

fn load_spec(path: &PathBuf) -> Result<MixtureSpec, Box<dyn std::error::Error>> {
    Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
}

fn run(args: &Args) -> Result<(), Box<dyn std::error::Error>> {
    match &args.command {
        Command::Resolve { spec, out } => {
            let table = resolve(&load_spec(spec)?)?;
            let mut csv = String::from("dataset,probability\n");
            for (name, p) in &table.entries {
                csv.push_str(&format!("{name},{p}\n"));
            }
            match out {
                Some(path) => File::create(path)?.write_all(csv.as_bytes())?,
                None => print!("{csv}"),
            }
        }
        Command::Stream { spec, seed, n } => {
            let table = resolve(&load_spec(spec)?)?;
            let stdout = std::io::stdout();
            let mut lock = stdout.lock();
            for name in sample_stream(&table, *seed, *n) {
                writeln!(lock, "{name}")?;
            }
        }
    }
    Ok(())
}
