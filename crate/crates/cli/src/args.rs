use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

#[derive(Debug, Parser)]
#[command(
    name = "memxfer",
    version,
    about = "Memory transfer between temporal interaction graphs"
)]
pub struct Cli {
    /// JSON config file; command-line flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Directory for the resolved config, log and reports
    /// [default: runs/<command>].
    #[arg(long, global = true)]
    pub run_dir: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic source/target pair and an encoder pool as CSV.
    Generate(GenerateArgs),
    /// Build and cache the static transformation of an event log.
    Transform(TransformArgs),
    /// Train the temporal graph network on an event log.
    TrainTgn(TrainTgnArgs),
    /// Train the feature graph attention encoder on a pool of event logs.
    TrainFgat(TrainFgatArgs),
    /// Run one transfer variant on a target event log.
    Transfer(TransferArgs),
    /// Run variants over a grid of target training fractions.
    Sweep(SweepArgs),
    /// Aggregate sweep rows into per-fraction curves.
    PlotCsv(PlotArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct GenerateArgs {
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Number of encoder-pool graphs.
    #[arg(long)]
    pub pool_size: Option<usize>,
    #[arg(long)]
    pub signature_strength: Option<f64>,
}

#[derive(Debug, Args, Serialize)]
pub struct TransformArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub min_user_deg: usize,
    #[arg(long, default_value_t = 0)]
    pub min_item_deg: usize,
}

#[derive(Debug, Args, Serialize)]
pub struct TrainTgnArgs {
    #[arg(long)]
    pub graph: PathBuf,
    #[arg(long, default_value_t = 10)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Train on the earliest share of the events only.
    #[arg(long, default_value_t = 1.0)]
    pub train_fraction: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct TrainFgatArgs {
    /// Directory of event CSV files.
    #[arg(long)]
    pub pool: PathBuf,
    #[arg(long, default_value_t = 150)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Train on the earliest share of each graph's events.
    #[arg(long, default_value_t = 0.7)]
    pub train_fraction: f64,
    /// Graph names (file stems) that must not be part of the pool.
    #[arg(long, value_delimiter = ',')]
    pub exclude: Vec<String>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct TransferArgs {
    /// nt (from scratch), wt (weights only) or mintt (weights and mapped memory).
    #[arg(long)]
    pub variant: String,
    #[arg(long)]
    pub src_ckpt: Option<PathBuf>,
    #[arg(long)]
    pub fgat_ckpt: Option<PathBuf>,
    #[arg(long)]
    pub target: PathBuf,
    /// Train, validation and test fractions.
    #[arg(long, default_value = "0.1,0.45,0.45")]
    pub split: String,
    #[arg(long)]
    pub ft_epochs: Option<usize>,
    #[arg(long)]
    pub nt_epochs: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Several seeds, as `a..b` (inclusive) or a comma list; overrides --seed.
    #[arg(long)]
    pub seeds: Option<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct SweepArgs {
    #[arg(long)]
    pub src_ckpt: Option<PathBuf>,
    #[arg(long)]
    pub fgat_ckpt: Option<PathBuf>,
    #[arg(long)]
    pub target: PathBuf,
    #[arg(long, default_value = "0.5,0.3,0.1")]
    pub fractions: String,
    #[arg(long, default_value = "nt,wt,mintt")]
    pub variants: String,
    #[arg(long, default_value = "0")]
    pub seeds: String,
    #[arg(long)]
    pub ft_epochs: Option<usize>,
    #[arg(long)]
    pub nt_epochs: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct PlotArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, default_value = "ap")]
    pub metric: String,
    #[arg(long)]
    pub out: PathBuf,
}
