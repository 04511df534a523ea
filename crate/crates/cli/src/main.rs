//! Command-line driver: ingestion, preprocessing, training, grid search,
//! per-subject study, and synthetic data generation under one JSON config.

mod commands;
mod config;
mod svg;

use clap::{Parser, Subcommand};
use config::CliConfig;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "eegdl", about = "EEG trial classification pipelines", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// JSON configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Parallel runs for grid search.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    /// Override train.seed from the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Override out_dir from the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic labeled dataset in the NPY layout.
    Synth,
    /// Apply the family's preprocessing pipeline and write the arrays.
    Preprocess,
    /// Train one model and emit history/summary reports.
    Train,
    /// Run the convolutional hyperparameter grid.
    Grid,
    /// Train, validate, and test each subject separately plus pooled.
    Subjects,
}

fn run(cli: &Cli) -> eegdl::Result<()> {
    let config_path = cli
        .config
        .as_ref()
        .ok_or_else(|| eegdl::Error::Config("--config <file> is required".into()))?;
    let mut cfg = CliConfig::load(config_path)?;
    if let Some(seed) = cli.seed {
        cfg.train.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.out_dir = out.clone();
    }
    match cli.command {
        Command::Synth => commands::cmd_synth(&cfg),
        Command::Preprocess => commands::cmd_preprocess(&cfg),
        Command::Train => commands::cmd_train(&cfg),
        Command::Grid => commands::cmd_grid(&cfg, cli.jobs.max(1)),
        Command::Subjects => commands::cmd_subjects(&cfg),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
