//! Command-line front end: pretraining, classifier and mapping training,
//! inference, evaluation and sweeps. Every subcommand writes its artifacts
//! and resolved configuration under `--out`.

mod commands;
pub mod config;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use emb2emb::fgim::Variant;
use thiserror::Error;

pub use commands::run;
pub use config::RunConfig;

/// File name of the resolved configuration written by every run.
pub const RESOLVED_CONFIG: &str = "config.txt";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] emb2emb::Error),
}

impl CliError {
    /// 2 for usage, configuration and input problems, 1 for failures while
    /// running.
    pub fn exit_code(&self) -> i32 {
        use emb2emb::Error as E;
        match self {
            CliError::Usage(_) => 2,
            CliError::Core(
                E::Config(_)
                | E::Mismatch(_)
                | E::Io { .. }
                | E::Parse { .. }
                | E::Checkpoint(_)
                | E::UntrainedJudge
                | E::Json(_)
                | E::SingleClass(_),
            ) => 2,
            CliError::Core(_) => 1,
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "emb2emb",
    version,
    about = "Text-to-text learning in a frozen autoencoder's embedding space"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Flat `key = value` configuration file.
    #[arg(long, short)]
    pub config: Option<PathBuf>,
    /// Override one configuration key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Directory for every artifact of the run.
    #[arg(long, short)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct FgimArgs {
    /// Refine mapped embeddings with fast gradient iterative modification.
    #[arg(long)]
    pub fgim: bool,
    #[arg(long, value_name = "classifier-only|full-loss")]
    pub fgim_variant: Option<Variant>,
    #[arg(long, value_name = "T")]
    pub fgim_threshold: Option<f64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train the denoising autoencoder on `train_text`.
    Pretrain {
        #[command(flatten)]
        common: Common,
    },
    /// Train a latent style classifier on the `labeled` TSV.
    TrainClassifier {
        #[command(flatten)]
        common: Common,
        /// Save an evaluation judge (autoencoder plus classifier) instead.
        #[arg(long)]
        judge: bool,
    },
    /// Train the mapping in the configured mode.
    Train {
        #[command(flatten)]
        common: Common,
    },
    /// Map every line of `--input` and decode it.
    Infer {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        input: PathBuf,
        /// Mapping checkpoint.
        #[arg(long)]
        mapping: PathBuf,
        #[command(flatten)]
        fgim: FgimArgs,
    },
    /// Score hypotheses against references, sources and the judge.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        hyp: PathBuf,
        /// Reference file aligned with `--hyp`; repeatable.
        #[arg(long = "reference")]
        references: Vec<PathBuf>,
        /// Source sentences aligned with `--hyp`.
        #[arg(long)]
        source: Option<PathBuf>,
    },
    /// Train and evaluate one mapping per grid value of `sweep_param`.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        fgim: FgimArgs,
    },
}
