//! Command-line definition.

use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};
use stylelab_core::config::Variant;

#[derive(Debug, Clone, Parser)]
#[command(name = "stylelab", version, about = "Style/content disentanglement pipeline")]
pub struct Cli {
    /// JSON run configuration; omitted fields take their defaults.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the run seed (and the corpus seed).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Run directory holding every artifact.
    #[arg(long, global = true, default_value = "run")]
    pub out: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum VariantArg {
    Full,
    NoDisentanglement,
}

impl From<VariantArg> for Variant {
    fn from(v: VariantArg) -> Self {
        match v {
            VariantArg::Full => Variant::Full,
            VariantArg::NoDisentanglement => Variant::NoDisentanglement,
        }
    }
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Generate the synthetic corpus and its cross-topic split.
    GenCorpus,
    /// Mine hard and control pairs over the training split.
    Mine,
    /// Contrastive pretraining of the style encoder.
    Pretrain,
    /// Joint finetuning of encoders and generator.
    Finetune {
        /// Overrides the configured variant.
        #[arg(long, value_enum)]
        variant: Option<VariantArg>,
    },
    /// Cross-topic authorship retrieval metrics.
    EvalAa {
        /// Score a precomputed embeddings file instead of the checkpoints.
        #[arg(long)]
        embeddings: Option<PathBuf>,
    },
    /// Few-shot machine-text detection.
    EvalDetect,
    /// Leakage probe, explanation check and a summary of all reports.
    Report,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::GenCorpus => "gen-corpus",
            Command::Mine => "mine",
            Command::Pretrain => "pretrain",
            Command::Finetune { .. } => "finetune",
            Command::EvalAa { .. } => "eval-aa",
            Command::EvalDetect => "eval-detect",
            Command::Report => "report",
        }
    }
}
