//! Staged pipeline behind the command-line tool: configuration, artifacts,
//! manifests and the report.

mod config;
mod manifest;
mod stages;

use std::path::PathBuf;

use clap::{Parser, ValueEnum};

pub use config::{DatasetConfig, ExperimentConfig, N0Policy, Resolved, SpectralConfig};
pub use manifest::{hash_file, Manifest, StageEntry, MANIFEST};
pub use stages::*;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("upstream artifact: {0}")]
    Upstream(String),
    #[error(transparent)]
    Stage(#[from] crate::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Upstream(_) => 3,
            CliError::Stage(_) => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Stage {
    All,
    Model,
    Dataset,
    Train,
    Certify,
    Simulate,
    Report,
}

impl Stage {
    const ORDER: [Stage; 6] = [Stage::Model, Stage::Dataset, Stage::Train, Stage::Certify, Stage::Simulate, Stage::Report];

    pub fn run(self, run: &Run) -> Result<(), CliError> {
        match self {
            Stage::All => Self::ORDER.iter().try_for_each(|s| s.run(run)),
            Stage::Model => cmd_model(run),
            Stage::Dataset => cmd_dataset(run),
            Stage::Train => cmd_train(run),
            Stage::Certify => cmd_certify(run),
            Stage::Simulate => cmd_simulate(run),
            Stage::Report => cmd_report(run),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "safe-il-pde", about = "Certified imitation learning for boundary control of a reaction-diffusion PDE")]
pub struct Args {
    #[arg(long)]
    pub config: PathBuf,
    /// Run directory; defaults to `out` from the config, then `runs/<scenario>`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "all")]
    pub stage: Stage,
    /// Replaces the config seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

pub fn execute(args: &Args) -> Result<(), CliError> {
    let cfg = ExperimentConfig::load(&args.config)?;
    let run = Run::new(cfg, args.out.clone(), args.seed)?;
    args.stage.run(&run)
}

/// Runs the parsed command and returns the process exit code.
pub fn main_with(args: &Args) -> i32 {
    match execute(args) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
