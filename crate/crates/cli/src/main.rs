use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use dsi_cli::stages::{
    cmd_assimilate, cmd_evaluate, cmd_generate_prior, cmd_pipeline, cmd_rs, cmd_train,
};
use dsi_cli::{exit_code, Artifacts, RunConfig};
use dsi_core::Result;

/// Data-space inversion pipeline driver.
#[derive(Parser)]
#[command(name = "dsi", version, about)]
struct Cli {
    /// Path of the JSON run configuration.
    #[arg(long)]
    config: PathBuf,

    /// Overrides every stage seed in the configuration; each stage derives
    /// its own seed from this value at a distinct offset.
    #[arg(long)]
    seed: Option<u64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw the prior ensemble, the held-out truth, and the observations.
    GeneratePrior,
    /// Fit every parameterization the method roster references.
    Train,
    /// Run every configured posterior sampler.
    Assimilate,
    /// Rejection-sample the reference posterior over a fresh prior.
    Rs,
    /// Write quantile bands, cross-plots, correlation series, Mahalanobis
    /// CDFs, and the KS summary.
    Evaluate,
    /// All stages in order.
    Pipeline,
}

fn run(cli: &Cli) -> Result<()> {
    let mut cfg = RunConfig::load(&cli.config)?;
    if let Some(seed) = cli.seed {
        cfg.override_seeds(seed);
    }
    let art = Artifacts::new(cfg.effective_output_dir());
    match cli.command {
        Command::GeneratePrior => cmd_generate_prior(&cfg, &art),
        Command::Train => cmd_train(&cfg, &art),
        Command::Assimilate => cmd_assimilate(&cfg, &art),
        Command::Rs => cmd_rs(&cfg, &art),
        Command::Evaluate => cmd_evaluate(&cfg, &art),
        Command::Pipeline => cmd_pipeline(&cfg, &art),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
