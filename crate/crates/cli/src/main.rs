use std::path::PathBuf;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};

use fsd_core::partition::{Scheme, DEFAULT_EPSILON};
use fsd_core::runtime::{ChannelKind, DEFAULT_BRANCHING};

mod commands;
mod report;

#[derive(Parser)]
#[command(
    name = "fsd",
    version,
    about = "Distributed sparse DNN inference over emulated serverless channels"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic (or TSV-loaded) model and input batch.
    Generate(GenerateArgs),
    /// Split the model into per-worker packs.
    Partition(PartitionArgs),
    /// Run inference once and write output, meter and cost reports.
    Run(RunArgs),
    /// Serial, queue and object runs over a list of worker counts.
    Compare(CompareArgs),
}

#[derive(Args)]
pub struct GenerateArgs {
    #[arg(long, default_value_t = 256)]
    pub n: u32,
    #[arg(long, default_value_t = 8)]
    pub layers: u32,
    #[arg(long, default_value_t = 8)]
    pub nnz_per_row: u32,
    #[arg(long, default_value_t = 16)]
    pub batch: u32,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Graph Challenge layer files ("row col value", 1-based), in layer
    /// order. Replaces the synthetic layers; --layers is then ignored.
    pub tsv: Vec<PathBuf>,
}

#[derive(Args)]
pub struct PartitionArgs {
    #[arg(long, default_value_t = 4)]
    pub workers: u32,
    #[arg(long, default_value_t = Scheme::Hgp)]
    pub scheme: Scheme,
    #[arg(long, default_value_t = DEFAULT_EPSILON)]
    pub epsilon: f64,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct RunArgs {
    /// Defaults to 1 for serial runs and 4 otherwise.
    #[arg(long)]
    pub workers: Option<u32>,
    #[arg(long, default_value_t = ChannelKind::Queue)]
    pub channel: ChannelKind,
    #[arg(long, default_value_t = Scheme::Hgp)]
    pub scheme: Scheme,
    #[arg(long, default_value_t = DEFAULT_BRANCHING)]
    pub branching: u32,
    #[arg(long)]
    pub pricing: Option<PathBuf>,
    /// Compare against the serial oracle and fail on any difference.
    #[arg(long)]
    pub verify: bool,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct CompareArgs {
    /// Comma-separated worker counts.
    #[arg(long, value_delimiter = ',', default_value = "2,4,8")]
    pub workers: Vec<u32>,
    #[arg(long, default_value_t = Scheme::Hgp)]
    pub scheme: Scheme,
    #[arg(long, default_value_t = DEFAULT_EPSILON)]
    pub epsilon: f64,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, default_value_t = DEFAULT_BRANCHING)]
    pub branching: u32,
    #[arg(long)]
    pub pricing: Option<PathBuf>,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Generate(a) => commands::generate(&a),
        Command::Partition(a) => commands::partition(&a),
        Command::Run(a) => commands::run(&a),
        Command::Compare(a) => commands::compare(&a),
    }
}
