//! `skipnet`: generate synthetic sessions, train, evaluate, predict and
//! score.

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::{Overrides, RunConfig};

#[derive(Parser)]
#[command(
    name = "skipnet",
    version,
    about = "Sequential skip prediction for listening sessions"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// TOML run configuration; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Seed for generation, initialization, splitting and shuffling.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Directory holding input files.
    #[arg(long, global = true)]
    data_dir: Option<PathBuf>,

    /// Directory receiving outputs.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,

    /// Checkpoint to evaluate or predict with, or to resume training from.
    #[arg(long, global = true)]
    checkpoint: Option<PathBuf>,

    /// Data-parallel gradient workers.
    #[arg(long, global = true)]
    workers: Option<usize>,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Write a calibrated synthetic dataset and its report.
    Generate,
    /// Train with early stopping, writing checkpoints and a log.
    Train,
    /// Score a checkpoint and the baseline on labeled sessions.
    Evaluate,
    /// Predict second-half skips for unlabeled sessions.
    Predict,
    /// Score a predictions file against labels.
    Score,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let overrides = Overrides {
        seed: cli.seed,
        data_dir: cli.data_dir,
        out_dir: cli.out_dir,
        checkpoint: cli.checkpoint,
        workers: cli.workers,
    };
    let result =
        RunConfig::load(cli.config.as_deref(), &overrides).and_then(|cfg| match cli.command {
            Command::Generate => commands::cmd_generate(&cfg),
            Command::Train => commands::cmd_train(&cfg),
            Command::Evaluate => commands::cmd_evaluate(&cfg),
            Command::Predict => commands::cmd_predict(&cfg),
            Command::Score => commands::cmd_score(&cfg),
        });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("skipnet: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
