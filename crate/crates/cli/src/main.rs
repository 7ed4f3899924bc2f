//! `rca`: simulate, fit, stability-select, evaluate and check residual
//! component analysis models.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rca_core::eval::EdgeMode;
use rca_core::RcaError;

use crate::config::{FitMethod, StabilityMethod};

#[derive(Parser, Debug)]
#[command(
    name = "rca",
    version,
    about = "Residual component analysis experiments"
)]
pub struct Cli {
    /// Seed for simulation and subsampling.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// JSON run configuration; flags take precedence over it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Draw a synthetic data set.
    Simulate(SimulateArgs),
    /// Fit one model to a data matrix.
    Fit(FitArgs),
    /// Stability selection over a lambda path.
    Stability(StabilityArgs),
    /// Precision-recall curves of edge paths against a true edge list.
    Eval(EvalArgs),
    /// Score features by their residual against an RBF time kernel.
    Residual(ResidualArgs),
    /// Verify the certificates of a saved fit.
    Check(CheckArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SimKind {
    /// Confounded sparse Gaussian Markov random field.
    Gmrf,
    /// Two-group time series with planted differential features.
    Series,
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    #[arg(long, value_enum, default_value = "gmrf")]
    pub kind: SimKind,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub p: Option<usize>,
    #[arg(long)]
    pub q: Option<usize>,
    #[arg(long)]
    pub sparsity: Option<f64>,
    #[arg(long)]
    pub snr: Option<f64>,
    #[arg(long)]
    pub features: Option<usize>,
    #[arg(long)]
    pub differential: Option<usize>,
    #[arg(long)]
    pub amplitude: Option<f64>,
    #[arg(long)]
    pub noise_sd: Option<f64>,
}

#[derive(Args, Debug)]
pub struct FitArgs {
    /// Data CSV, one row per observation.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum)]
    pub fitter: Option<FitMethod>,
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Residual covariance CSV for the rca fitter.
    #[arg(long)]
    pub sigma: Option<PathBuf>,
    #[arg(long)]
    pub rank: Option<usize>,
    #[arg(long)]
    pub noise_var: Option<f64>,
    #[arg(long)]
    pub max_iter: Option<usize>,
}

#[derive(Args, Debug)]
pub struct StabilityArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum)]
    pub fitter: Option<StabilityMethod>,
    #[arg(long)]
    pub repeats: Option<usize>,
    #[arg(long)]
    pub fraction: Option<f64>,
    #[arg(long)]
    pub threshold: Option<f64>,
    #[arg(long, value_parser = parse_mode)]
    pub mode: Option<EdgeMode>,
    #[arg(long)]
    pub grid_count: Option<usize>,
    #[arg(long, allow_hyphen_values = true)]
    pub grid_lo: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub grid_hi: Option<f64>,
    /// Run repeats on one thread.
    #[arg(long)]
    pub sequential: bool,
    #[arg(long)]
    pub max_iter: Option<usize>,
}

fn parse_mode(s: &str) -> Result<EdgeMode, String> {
    s.parse().map_err(|e: RcaError| e.to_string())
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Edge path JSON written by `stability`; repeat to compare methods.
    #[arg(long = "path", required = true)]
    pub paths: Vec<PathBuf>,
    /// True edge list CSV (`i,j`).
    #[arg(long)]
    pub truth: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ResidualArgs {
    /// Time points × features CSV.
    #[arg(long)]
    pub data: PathBuf,
    /// Time grid CSV (`time,group`), one row per data row.
    #[arg(long)]
    pub grid: PathBuf,
    /// Optional per-feature labels CSV (`feature,label`) for a ROC curve.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    #[arg(long)]
    pub lengthscale: Option<f64>,
    /// Diagonal jitter as a fraction of the data variance.
    #[arg(long)]
    pub jitter: Option<f64>,
}

#[derive(Args, Debug)]
pub struct CheckArgs {
    /// Directory written by `fit`.
    #[arg(long)]
    pub model: PathBuf,
}

fn exit_code(err: &RcaError) -> u8 {
    match err {
        RcaError::InvalidInput(_)
        | RcaError::NotPositiveDefinite { .. }
        | RcaError::RankUnavailable { .. }
        | RcaError::Parse { .. } => 2,
        RcaError::NoConvergence { .. } => 3,
        RcaError::Io { .. } => 4,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match commands::run(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code(&err))
        }
    }
}
