use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use contridge_core::LambdaMode;

#[derive(Debug, Parser)]
#[command(name = "contridge", version, about = "Continual ridge regression: asymptotic risk vs. simulation")]
pub struct Cli {
    /// Worker threads for replications and risk tables (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Asymptotic metric curves as CSV.
    Theory(ExperimentArgs),
    /// Monte Carlo metric curves as CSV.
    Simulate(ExperimentArgs),
    /// Theory and simulation side by side; exits 1 when more than 5% of rows
    /// fall outside 3 standard errors.
    Compare {
        #[command(flatten)]
        exp: ExperimentArgs,
        /// Use this noise level in the theory only (sensitivity check).
        #[arg(long)]
        theory_sigma2: Option<f64>,
    },
    /// Greedy regularization sequence as JSON.
    Tune(ExperimentArgs),
    /// Resolvent deterministic-equivalent deviations over an n-grid, as JSON.
    ValidateRmt(RmtArgs),
    /// List scenario presets.
    Scenarios,
}

#[derive(Debug, Clone, Args)]
pub struct ExperimentArgs {
    /// TOML experiment config; flags below override its keys.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output file (default: stdout).
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub replications: Option<usize>,
    #[arg(long)]
    pub scenario: Option<String>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub tasks: Option<usize>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long, value_parser = parse_mode)]
    pub lambda_mode: Option<LambdaMode>,
    #[arg(long)]
    pub lambda_scale: Option<f64>,
}

fn parse_mode(s: &str) -> Result<LambdaMode, String> {
    s.parse().map_err(|e: contridge_core::Error| e.to_string())
}

#[derive(Debug, Clone, Args)]
pub struct RmtArgs {
    /// Comma-separated sample sizes.
    #[arg(long, value_delimiter = ',', default_values_t = vec![100, 400, 1600])]
    pub n_list: Vec<usize>,
    #[arg(long, default_value_t = 1.2)]
    pub gamma: f64,
    #[arg(long, default_value_t = 1.0)]
    pub lambda: f64,
    #[arg(long, default_value_t = 5)]
    pub trials: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}
