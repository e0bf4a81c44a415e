use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

/// Estimate interventional distributions in an unobserved target domain
/// from a proxy of the hidden confounder.
#[derive(Debug, Parser)]
#[command(name = "proxy-transfer", version)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Draw a random model (or load one) and sample a dataset from it.
    Simulate(SimulateArgs),
    /// Estimate q(y | do(x)) from a dataset.
    Estimate(EstimateArgs),
    /// Population-level identification from a model file.
    Identify(IdentifyArgs),
    /// Run a simulation study from a config file.
    Bench(BenchArgs),
    /// Merge proxy levels until P(W|E,x) has full row rank.
    ReduceProxy(ReduceProxyArgs),
    /// Bin a continuous proxy into categories.
    Discretize(DiscretizeArgs),
}

/// Category counts, from a sidecar file or flags.
#[derive(Debug, Args)]
pub struct DimsArgs {
    /// JSON file with k_e, k_u, k_w, k_x, k_y.
    #[arg(long, conflicts_with_all = ["k_e", "k_u", "k_w", "k_x", "k_y"])]
    pub dims: Option<PathBuf>,
    #[arg(long)]
    pub k_e: Option<usize>,
    #[arg(long)]
    pub k_u: Option<usize>,
    #[arg(long)]
    pub k_w: Option<usize>,
    #[arg(long)]
    pub k_x: Option<usize>,
    #[arg(long)]
    pub k_y: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub seed: u64,
    /// Number of records.
    #[arg(long)]
    pub n: usize,
    #[command(flatten)]
    pub dims: DimsArgs,
    /// Sample from this model instead of drawing one.
    #[arg(long, conflicts_with = "dims")]
    pub model: Option<PathBuf>,
    /// Where to write the model; it is not written otherwise.
    #[arg(long)]
    pub model_out: Option<PathBuf>,
    /// Where to write the dims sidecar.
    #[arg(long)]
    pub dims_out: Option<PathBuf>,
    /// Where to write the dataset; standard output otherwise.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Method {
    Reduced,
    Causal,
    Noadj,
    Wadj,
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub dims: DimsArgs,
    /// 1-based treatment level.
    #[arg(long)]
    pub x: usize,
    /// 1-based outcome level.
    #[arg(long)]
    pub y: usize,
    #[arg(long, value_enum, default_value = "reduced")]
    pub method: Method,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    /// Bootstrap resamples for a second interval (reduced method only).
    #[arg(long)]
    pub bootstrap: Option<usize>,
    /// Seed for bootstrap resamples and causal-fit starting points.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Random restarts of the causal fit.
    #[arg(long, default_value_t = 1)]
    pub restarts: usize,
    /// Confounder cardinality of the causal fit, if not the dims' k_u.
    #[arg(long)]
    pub fit_k_u: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct IdentifyArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub x: usize,
    #[arg(long)]
    pub y: usize,
    /// Regularise with (A A^T + ridge I)^-1 instead of refusing rank-deficient input.
    #[arg(long)]
    pub ridge: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Study {
    PointError,
    Baselines,
    Coverage,
    Runtime,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(value_enum)]
    pub study: Study,
    /// Experiment config (JSON).
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides the config's worker count.
    #[arg(long)]
    pub workers: Option<usize>,
    /// CSV results; standard output otherwise.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// JSON summary.
    #[arg(long)]
    pub summary: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReduceProxyArgs {
    /// Use the population P(W|E,x) of this model.
    #[arg(long, conflicts_with = "data", required_unless_present = "data")]
    pub model: Option<PathBuf>,
    /// Use the empirical P(W|E,x) of this dataset.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[command(flatten)]
    pub dims: DimsArgs,
    #[arg(long)]
    pub x: usize,
    #[arg(long, default_value_t = 1e-9)]
    pub rel_tol: f64,
    /// Write the dataset with merged proxy levels here (needs --data).
    #[arg(long, requires = "data")]
    pub data_out: Option<PathBuf>,
    /// Write the dims of the merged dataset here (needs --data).
    #[arg(long, requires = "data")]
    pub dims_out: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DiscretizeArgs {
    /// CSV with header `domain,value,x,y`; target rows use `T` and leave x, y empty.
    #[arg(long)]
    pub input: PathBuf,
    /// Partition file (JSON).
    #[arg(long, conflicts_with_all = ["edges", "search"])]
    pub partition: Option<PathBuf>,
    /// Comma-separated cut points.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, conflicts_with = "search")]
    pub edges: Option<Vec<f64>>,
    /// Lower end of the support, for --edges.
    #[arg(long, allow_negative_numbers = true, requires = "edges")]
    pub lower: Option<f64>,
    /// Upper end of the support, for --edges.
    #[arg(long, allow_negative_numbers = true, requires = "edges")]
    pub upper: Option<f64>,
    /// Search a quantile partition reaching this confounder cardinality.
    #[arg(long, value_name = "K_U", requires_all = ["max_bins", "k_x", "k_e"])]
    pub search: Option<usize>,
    #[arg(long)]
    pub max_bins: Option<usize>,
    /// Treatment levels, for --search.
    #[arg(long)]
    pub k_x: Option<usize>,
    /// Source domains, for --search.
    #[arg(long)]
    pub k_e: Option<usize>,
    #[arg(long, default_value_t = 1e-9)]
    pub rel_tol: f64,
    /// Write the partition used here.
    #[arg(long)]
    pub partition_out: Option<PathBuf>,
    /// Dataset CSV; standard output otherwise.
    #[arg(long)]
    pub out: Option<PathBuf>,
}
