//! `ged`: ingest graph datasets, train and evaluate learned edit distances,
//! compare graphs, and run the self-verification suites.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ged_core::dataset::Layout;
use ged_core::eval::Protocol;
use ged_core::gnn::Variant;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad flags, config values or missing inputs. Exit code 2.
    #[error("{0}")]
    Usage(String),
    /// The inputs were understood but the operation failed. Exit code 1.
    #[error("{0}")]
    Domain(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Domain(_) => 1,
        }
    }
}

pub fn domain(e: impl std::fmt::Display) -> CliError {
    CliError::Domain(e.to_string())
}

pub fn usage(e: impl std::fmt::Display) -> CliError {
    CliError::Usage(e.to_string())
}

#[derive(Debug, Parser)]
#[command(name = "ged", version, about = "Graph edit distances: classical bounds and a learned Hausdorff distance")]
#[command(after_help = "Exit codes: 0 success, 1 domain error, 2 usage or config error.")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// TOML run configuration; flags override its values
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Seed for every random choice (default 0)
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for distance matrices and triplet tapes (default 1)
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Directory that receives run directories (default `runs`)
    #[arg(long, global = true)]
    pub output: Option<PathBuf>,
    /// Base directory for relative dataset paths
    #[arg(long, global = true, env = "GED_DATA_ROOT")]
    pub data_root: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Parse a dataset and print split sizes and graph statistics
    Ingest(IngestArgs),
    /// Write a synthetic labelled dataset with a TSV manifest
    Synth(SynthArgs),
    /// Train a model with the triplet loss; writes checkpoint and history
    Train(TrainArgs),
    /// Evaluate a checkpoint on a dataset split
    Eval(EvalArgs),
    /// Distance between two graph files
    Dist(DistArgs),
    /// Gradient, bound and invariance self-checks
    Verify(VerifyArgs),
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// Manifest (`.tsv` / `.cxl`) or directory with train/valid/test split files
    pub dataset: PathBuf,
    /// Directory that relative graph paths resolve against
    #[arg(long)]
    pub graph_root: Option<PathBuf>,
    /// Print the summary as JSON
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Output directory; must not exist or be empty
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 5)]
    pub classes: usize,
    #[arg(long, default_value_t = 50)]
    pub per_class: usize,
    #[arg(long, default_value_t = 10)]
    pub min_nodes: usize,
    #[arg(long, default_value_t = 20)]
    pub max_nodes: usize,
    /// Position noise (positions layout)
    #[arg(long, default_value_t = 0.05)]
    pub jitter: f64,
    /// positions | neighbours
    #[arg(long, default_value = "neighbours")]
    pub layout: Layout,
}

#[derive(Debug, Args, Default, Clone)]
pub struct ModelOverrides {
    /// gat | gru
    #[arg(long)]
    pub variant: Option<Variant>,
    /// Number of propagation layers K
    #[arg(long)]
    pub layers: Option<usize>,
    /// Node embedding width
    #[arg(long)]
    pub hidden: Option<usize>,
    /// Attention heads (GAT)
    #[arg(long)]
    pub heads: Option<usize>,
}

#[derive(Debug, Args, Default, Clone)]
pub struct DistanceOverrides {
    /// Learned insertion and deletion offset; only used with --spatial-blend
    #[arg(long)]
    pub tau: Option<f64>,
    /// Blend raw node attributes into the learned costs
    #[arg(long)]
    pub spatial_blend: bool,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset manifest or split directory (overrides the config file)
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[command(flatten)]
    pub model: ModelOverrides,
    #[command(flatten)]
    pub distance: DistanceOverrides,
    /// Triplet margin
    #[arg(long)]
    pub margin: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub patience: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Metric {
    Map,
    PairAuc,
    TripletAcc,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Split {
    Train,
    Validation,
    Test,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Dataset manifest or split directory (overrides the config file)
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Gallery split
    #[arg(long, value_enum, default_value = "test")]
    pub split: Split,
    /// Query split for map; defaults to the gallery split, with each query
    /// left out of its own ranking
    #[arg(long, value_enum)]
    pub queries: Option<Split>,
    /// Repeatable; defaults to map
    #[arg(long, value_enum)]
    pub metric: Vec<Metric>,
    /// individual | combined
    #[arg(long, default_value = "individual")]
    pub protocol: Protocol,
    /// Number of evaluation pairs for pair-auc
    #[arg(long, default_value_t = 1000)]
    pub pairs: usize,
    /// Number of evaluation triplets for triplet-acc
    #[arg(long, default_value_t = 1000)]
    pub triplets: usize,
    /// Keep each query in its own ranking
    #[arg(long)]
    pub include_self: bool,
    #[command(flatten)]
    pub distance: DistanceOverrides,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Method {
    Exact,
    Aed,
    Hed,
    Learned,
}

#[derive(Debug, Args)]
pub struct DistArgs {
    pub graph_a: PathBuf,
    pub graph_b: PathBuf,
    #[arg(long, value_enum, default_value = "hed")]
    pub method: Method,
    /// Required for the learned method
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Node/edge cost trade-off for the classical methods
    #[arg(long, default_value_t = 0.5)]
    pub alpha: f64,
    #[arg(long, default_value_t = 1.0)]
    pub tau_node: f64,
    #[arg(long, default_value_t = 1.0)]
    pub tau_edge: f64,
    /// Largest graph the exact search accepts
    #[arg(long, default_value_t = 12)]
    pub node_limit: usize,
    #[command(flatten)]
    pub distance: DistanceOverrides,
    /// Write the node correspondence (learned) or node map (exact, aed) as JSON
    #[arg(long)]
    pub correspondence: Option<PathBuf>,
    /// Print a JSON object instead of the bare distance
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    /// Gradient checks run for seeds 0..N
    #[arg(long, default_value_t = 3)]
    pub seeds: u64,
    /// Random graph pairs for the bound and metric suites
    #[arg(long, default_value_t = 50)]
    pub pairs: usize,
    /// Write the full report as JSON
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Test hook: offset added to every analytic gradient
    #[arg(long, hide = true, default_value_t = 0.0)]
    pub corrupt_gradient: f64,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
