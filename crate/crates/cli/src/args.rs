use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use difflearn::config::{ClassCount, DataSpec, NonIidAgents, TopologySpec};
use difflearn::{Algorithm, Rule};

/// Simulate server-less federated learning over an agent graph.
#[derive(Debug, Parser)]
#[command(name = "difflearn", version)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Option<Command>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run an experiment (one record per repetition plus an aggregate).
    Run(Box<RunArgs>),
    /// Summarise two or more record files side by side.
    Compare(CompareArgs),
    /// List the shipped presets.
    Presets,
}

/// Settings come from the preset, then the config file, then these flags;
/// later sources win.
#[derive(Debug, Clone, Default, Args)]
pub struct RunArgs {
    /// Start from a named preset (see `difflearn presets`).
    #[arg(long)]
    pub preset: Option<String>,
    /// TOML file with any subset of the run settings.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Master seed; repetition i uses seed + i. [default: 0]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Monte-Carlo repetitions. [default: the preset's count, else 1]
    #[arg(long)]
    pub reps: Option<usize>,
    /// diffusion, consensus, centralized or isolated. [default: diffusion]
    #[arg(long)]
    pub algorithm: Option<Algorithm>,
    /// Combination rule: constant or adaptive. [default: constant]
    #[arg(long)]
    pub rule: Option<Rule>,
    /// Epochs E. [default: 30]
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Communication rounds per epoch T. [default: 6]
    #[arg(long)]
    pub rounds: Option<usize>,
    /// Mini-batch size b. [default: 10]
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// SGD steps per round. [default: ceil(D_k / (b * T))]
    #[arg(long)]
    pub local_batches: Option<usize>,
    /// Step size mu. [default: 0.01]
    #[arg(long)]
    pub mu: Option<f64>,
    /// Scale a of the Gompertz weighting. [default: 5]
    #[arg(long = "gombertz-a")]
    pub gombertz_a: Option<f64>,
    /// line:N, complete:N, rgg:N:RADIUS or an edge-list file. [default: line:4]
    #[arg(long)]
    pub topology: Option<TopologySpec>,
    /// MNIST directory or synthetic:train=..,test=..,classes=..,dim=..,noise=..,seed=..
    /// [default: $DIFFLEARN_DATA]
    #[arg(long)]
    pub data: Option<DataSpec>,
    /// Samples per agent D_k. [default: 600]
    #[arg(long)]
    pub shard_size: Option<usize>,
    /// none, all, random:P, agents:i,j,.., central:N or edge:N. [default: none]
    #[arg(long)]
    pub noniid: Option<NonIidAgents>,
    /// Classes per non-IID agent: N or upto:N. [default: 5]
    #[arg(long)]
    pub classes: Option<ClassCount>,
    /// Hidden layer widths, comma separated. [default: 64,64]
    #[arg(long, value_delimiter = ',')]
    pub hidden: Option<Vec<usize>>,
    /// Evaluate on a seeded subset of n test samples.
    #[arg(long)]
    pub eval_subset: Option<usize>,
    /// Accuracy threshold for the epochs-to-threshold summary.
    #[arg(long, default_value_t = 0.85)]
    pub threshold: f64,
    /// Output directory for records.
    #[arg(long, default_value = "runs")]
    pub out: PathBuf,
    /// File name prefix. [default: the preset name, else "run"]
    #[arg(long)]
    pub name: Option<String>,
    /// Write a parameter checkpoint per epoch into this directory.
    #[arg(long)]
    pub checkpoint_dir: Option<PathBuf>,
    /// Pin every run to a single worker and fixed agent order.
    #[arg(long)]
    pub sequential: bool,
    /// Print the resolved configuration as TOML and exit.
    #[arg(long)]
    pub print_config: bool,
}

#[derive(Debug, Clone, Args)]
pub struct CompareArgs {
    /// Record or aggregate files.
    #[arg(required = true)]
    pub records: Vec<PathBuf>,
    /// Accuracy threshold for the epochs-to-threshold column.
    #[arg(long, default_value_t = 0.85)]
    pub threshold: f64,
}
