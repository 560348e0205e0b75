use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use gpae_core::pipeline::{self, RunError};
use gpae_core::synth::{make_synthetic, SynthKind};

#[derive(Parser)]
#[command(name = "gpae", version, about = "Counterfactual explanations with a GP auto-encoder")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every stage described by a JSON config.
    Run { config: PathBuf },
    /// Write a synthetic dataset (data.csv + schema.json).
    Synth {
        /// two-gaussians, two-moons or lcd-like
        kind: SynthKind,
        n: usize,
        seed: u64,
        out_dir: PathBuf,
    },
    /// Print the metric tables of a finished run.
    Report { run_dir: PathBuf },
}

const CONFIG_ERROR: u8 = 1;
const STAGE_FAILURE: u8 = 2;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match cli.command {
        Command::Run { config } => match pipeline::run_file(&config) {
            Ok(m) => {
                log::info!("run finished: {}", m.status);
                ExitCode::SUCCESS
            }
            Err(e @ RunError::Config(_)) => {
                eprintln!("error: {e}");
                ExitCode::from(CONFIG_ERROR)
            }
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::from(STAGE_FAILURE)
            }
        },
        Command::Synth { kind, n, seed, out_dir } => {
            match make_synthetic(kind, n, seed).and_then(|s| s.write(&out_dir)) {
                Ok((csv, schema)) => {
                    println!("{}\n{}", csv.display(), schema.display());
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::from(CONFIG_ERROR)
                }
            }
        }
        Command::Report { run_dir } => match pipeline::format_report(&run_dir) {
            Ok(s) => {
                print!("{s}");
                ExitCode::SUCCESS
            }
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::from(CONFIG_ERROR)
            }
        },
    }
}
