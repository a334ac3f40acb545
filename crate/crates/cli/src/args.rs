use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "medshift", version, about = "Direct and indirect effects under stochastic interventions")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sample a dataset (with --n) or run a Monte Carlo study.
    Simulate(SimulateArgs),
    /// Estimate effects on a CSV file.
    Estimate(EstimateArgs),
    /// Exact truths and robustness checks for a known law.
    Oracle(OracleArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EstimatorChoice {
    Onestep,
    Tmle,
    Both,
}

/// Intervention flags shared by every command.
#[derive(Debug, Args, Clone)]
pub struct InterventionArgs {
    /// identity, odds_tilt, exp_tilt or discrete_shift.
    #[arg(long)]
    pub intervention: Option<String>,
    /// Single intervention parameter.
    #[arg(long, conflicts_with = "delta_grid", allow_hyphen_values = true)]
    pub delta: Option<f64>,
    /// Parameter grid, either `start:stop:step` or a comma-separated list.
    #[arg(long, allow_hyphen_values = true)]
    pub delta_grid: Option<String>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Monte Carlo configuration JSON.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Named Monte Carlo profile (desk or full) used when no config is given.
    #[arg(long)]
    pub profile: Option<String>,
    /// Write one sampled dataset of this size instead of running a study.
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// sim, shift, or a path to a law JSON document.
    #[arg(long)]
    pub law: Option<String>,
    /// Lower probability clamp; the upper bound is 1 minus this.
    #[arg(long)]
    pub clamp: Option<f64>,
    /// Comma-separated misspecification arms.
    #[arg(long)]
    pub arms: Option<String>,
    /// Comma-separated sample sizes.
    #[arg(long)]
    pub sizes: Option<String>,
    #[arg(long)]
    pub reps: Option<usize>,
    #[command(flatten)]
    pub intervention: InterventionArgs,
    #[arg(long, value_enum)]
    pub estimator: Option<EstimatorChoice>,
    #[arg(long)]
    pub folds: Option<usize>,
    #[arg(long)]
    pub stabilize: bool,
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    /// Estimation configuration JSON; flags override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Column roles JSON: {"w": [...], "a": ..., "l": ..., "z": ..., "y": ...}.
    #[arg(long)]
    pub roles: Option<PathBuf>,
    #[command(flatten)]
    pub intervention: InterventionArgs,
    #[arg(long, value_enum)]
    pub estimator: Option<EstimatorChoice>,
    #[arg(long)]
    pub folds: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Stabilize the one-step weights.
    #[arg(long)]
    pub stabilize: bool,
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Fixed score tolerance for the targeted estimator (default: adaptive).
    #[arg(long)]
    pub tmle_tol: Option<f64>,
    #[arg(long)]
    pub tmle_max_iter: Option<usize>,
    /// Also write per-observation influence-function values.
    #[arg(long)]
    pub write_eif: bool,
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct OracleArgs {
    /// sim, shift, or a path to a law JSON document.
    #[arg(long, default_value = "sim")]
    pub law: String,
    #[arg(long)]
    pub clamp: Option<f64>,
    #[command(flatten)]
    pub intervention: InterventionArgs,
    /// Also evaluate a robustness configuration row (1-6) or `all`.
    #[arg(long)]
    pub robustness: Option<String>,
    /// Tolerance for the robustness identities.
    #[arg(long, default_value_t = 1e-8)]
    pub tol: f64,
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
}
