//! Command-line front end for the κ-GCN experiments.
//!
//! Exit codes: 0 on success, 1 for configuration or data problems, 2 for
//! numerical failures (including a failing self-test).

pub mod commands;
pub mod config;
pub mod output;
pub mod selftest;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use kgcn_core::autodiff::AutodiffError;
use kgcn_core::graph::GraphError;
use kgcn_core::manifold::GeometryError;
use kgcn_core::model::{Family, ModelError};

#[derive(Debug, Parser)]
#[command(name = "kgcn", version, about = "Constant-curvature graph convolutional networks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic graph.
    Synth(SynthArgs),
    /// Fit node embeddings to the shortest-path metric of a graph.
    Distortion(DistortionArgs),
    /// Semi-supervised node classification with early stopping.
    Nodeclass(NodeclassArgs),
    /// Estimate the sectional curvature of a graph from sampled triangles.
    Curvature(CurvatureArgs),
    /// Minimal distortion over a grid of fixed curvatures.
    Sweep(SweepArgs),
    /// Run the built-in invariant suites.
    Selftest(SelftestArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum GraphKind {
    Tree,
    Path,
    Cycle,
    Complete,
    Star,
    Torus,
    Sphere,
    Sbm,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, value_enum)]
    pub kind: GraphKind,
    /// Tree depth.
    #[arg(long, default_value_t = 5)]
    pub depth: usize,
    /// Children per tree node.
    #[arg(long, default_value_t = 4)]
    pub branching: usize,
    /// Node count (leaf count for a star).
    #[arg(long, default_value_t = 100)]
    pub n: usize,
    /// Connection radius of a geometric graph.
    #[arg(long, conflicts_with = "mean_degree")]
    pub radius: Option<f64>,
    /// Pick the geometric radius that gives this expected mean degree.
    #[arg(long)]
    pub mean_degree: Option<f64>,
    /// Community sizes of a stochastic block model, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "100,100")]
    pub sizes: Vec<usize>,
    #[arg(long, default_value_t = 0.1)]
    pub p_in: f64,
    #[arg(long, default_value_t = 0.005)]
    pub p_out: f64,
    /// Width of the noisy community-indicator features.
    #[arg(long, default_value_t = 16)]
    pub feature_dim: usize,
    #[arg(long, default_value_t = 0.5)]
    pub noise: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

/// Model configuration: preset, then `--config`, then `--set`, then the
/// dedicated flags. The configuration is resolved before the data paths are
/// checked, so a bad configuration is reported first.
#[derive(Debug, Args, Clone, Default)]
pub struct ModelArgs {
    /// JSON model configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Preset manifold components.
    #[arg(long, value_parser = parse_family)]
    pub family: Option<Family>,
    /// Override one configuration key, e.g. `--set lr_euclidean=0.005`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

fn parse_family(s: &str) -> Result<Family, String> {
    s.parse().map_err(|e: ModelError| e.to_string())
}

#[derive(Debug, Args)]
pub struct DistortionArgs {
    /// Edge list, one `u<TAB>v` pair per line.
    #[arg(long)]
    pub edges: Option<PathBuf>,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct NodeclassArgs {
    #[arg(long)]
    pub edges: Option<PathBuf>,
    /// Comma-separated feature rows.
    #[arg(long)]
    pub features: PathBuf,
    /// One class index per line.
    #[arg(long)]
    pub labels: PathBuf,
    /// Nodes available for training, early stopping and validation.
    #[arg(long, default_value_t = 1500)]
    pub n_known: usize,
    /// Training nodes per class.
    #[arg(long, default_value_t = 20, conflicts_with = "train_count")]
    pub per_label: usize,
    /// Fixed number of training nodes regardless of class.
    #[arg(long)]
    pub train_count: Option<usize>,
    #[arg(long, default_value_t = 500)]
    pub early_stop: usize,
    /// Seed of the data split.
    #[arg(long, default_value_t = 0)]
    pub split_seed: u64,
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CurvatureArgs {
    #[arg(long)]
    pub edges: PathBuf,
    /// Samples per node.
    #[arg(long, default_value_t = 1000)]
    pub iters: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Also write `curvature.json` with the per-node values here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub edges: Option<PathBuf>,
    #[arg(long, default_value_t = -5.0, allow_hyphen_values = true)]
    pub kappa_min: f64,
    #[arg(long, default_value_t = 5.0, allow_hyphen_values = true)]
    pub kappa_max: f64,
    #[arg(long, default_value_t = 21)]
    pub steps: usize,
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SelftestArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Break κ-addition on purpose to confirm the suites notice.
    #[arg(long)]
    pub inject_fault: bool,
    /// Also write `selftest.json` here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// A failing self-test; reported with the numeric exit code.
#[derive(Debug)]
pub struct SelftestFailed(pub usize);

impl std::fmt::Display for SelftestFailed {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} self-test check(s) failed", self.0)
    }
}

impl std::error::Error for SelftestFailed {}

/// Exit code and machine-readable tag for an error.
pub fn classify(err: &anyhow::Error) -> (i32, &'static str) {
    for cause in err.chain() {
        if cause.is::<SelftestFailed>() {
            return (2, "selftest");
        }
        if let Some(e) = cause.downcast_ref::<ModelError>() {
            return match e {
                ModelError::Config(_) => (1, "config"),
                ModelError::Graph(_) => (1, "data"),
                ModelError::Numeric(_) => (2, "numeric"),
            };
        }
        if cause.is::<GraphError>() {
            return (1, "data");
        }
        if cause.is::<AutodiffError>() || cause.is::<GeometryError>() {
            return (2, "numeric");
        }
        if cause.is::<config::ConfigError>() {
            return (1, "config");
        }
        if cause.is::<commands::UsageError>() {
            return (1, "usage");
        }
    }
    (1, "io")
}

/// Parses `argv` (including the program name), runs the command and returns
/// the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match commands::dispatch(cli.command) {
        Ok(()) => 0,
        Err(err) => {
            let (code, tag) = classify(&err);
            eprintln!("error[{tag}]: {err:#}");
            code
        }
    }
}
