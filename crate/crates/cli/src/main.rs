use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;
mod figures;
mod output;
mod settings;

/// Finite-length analysis, approximation, simulation and dynamic feedback
/// for frameless ALOHA.
#[derive(Debug, Parser)]
#[command(name = "frameless", version, about)]
struct Cli {
    /// More log output (repeat for debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Exact distribution of unresolved users via the decoder Markov chain.
    Exact(ExactArgs),
    /// Closed-form ripple/cloud curves and the Gaussian error-rate estimate.
    Approx(ApproxArgs),
    /// Monte Carlo simulation of frameless ALOHA contention periods.
    Simulate(SimulateArgs),
    /// Monte Carlo simulation of frame-based IRSA.
    Irsa(IrsaArgs),
    /// Dynamic-feedback campaign with per-subperiod access probabilities.
    Feedback(FeedbackArgs),
    /// Emit the data series and a plot script for one of the figures.
    ReproduceFigure(FigureArgs),
}

/// Options shared by every command.
#[derive(Debug, Args)]
pub struct CommonArgs {
    /// Configuration file with `key = value` lines; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory [default: $FRAMELESS_OUT_DIR or ./results].
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also write a gnuplot script next to the CSV files.
    #[arg(long)]
    pub plot: bool,
}

#[derive(Debug, Args)]
pub struct SystemArgs {
    /// Number of users.
    #[arg(long)]
    pub n: Option<usize>,
    /// Slot types as COUNTxBETA list, e.g. `50x3.0,10x5.0`.
    #[arg(long)]
    pub slots: Option<String>,
}

#[derive(Debug, Args)]
pub struct ExactArgs {
    #[command(flatten)]
    pub system: SystemArgs,
    /// Drop states lighter than this (0 keeps the analysis exact).
    #[arg(long)]
    pub prune_eps: Option<f64>,
    /// Maximum number of live decoder states.
    #[arg(long)]
    pub budget: Option<usize>,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Args)]
pub struct ApproxArgs {
    #[command(flatten)]
    pub system: SystemArgs,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub system: SystemArgs,
    /// Number of simulated contention periods.
    #[arg(long)]
    pub trials: Option<u64>,
    /// Seed of the random number generator.
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Args)]
pub struct IrsaArgs {
    /// Number of users.
    #[arg(long)]
    pub n: Option<usize>,
    /// Frame length in slots.
    #[arg(long)]
    pub frame: Option<usize>,
    /// Degree distribution as DEGREE:PROB list [default: 2:0.25,3:0.6,8:0.15].
    #[arg(long)]
    pub degrees: Option<String>,
    #[arg(long)]
    pub trials: Option<u64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Args)]
pub struct FeedbackArgs {
    /// Number of users.
    #[arg(long)]
    pub n: Option<usize>,
    /// Subperiod length in slots.
    #[arg(long)]
    pub t: Option<usize>,
    /// Latency target in slots.
    #[arg(long)]
    pub m_target: Option<usize>,
    /// Candidate mean degrees as LOWER:UPPER:STEP [default: 0.5:8:0.05].
    #[arg(long)]
    pub beta_grid: Option<String>,
    /// Quantity minimized by the controller: `approx` or `exact` (n <= 20).
    #[arg(long)]
    pub estimator: Option<String>,
    /// Truncate the virtual degree distribution at the unresolved count.
    #[arg(long)]
    pub strict_thinning: bool,
    #[arg(long)]
    pub trials: Option<u64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Args)]
pub struct FigureArgs {
    /// One of: example_p_dist, ripple_cloud_mean_std, approx_error_scaling,
    /// ripple_dist, per_approx, per_dynamic.
    pub name: String,
    /// Desk-scale overrides such as `n=100` or `trials=500`.
    #[arg(long)]
    pub scale: Option<String>,
    /// Only this subperiod length (per_dynamic).
    #[arg(long)]
    pub t: Option<usize>,
    #[arg(long)]
    pub trials: Option<u64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Pruning threshold for the exact analysis [default: 1e-16].
    #[arg(long)]
    pub prune_eps: Option<f64>,
    #[command(flatten)]
    pub common: CommonArgs,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();

    let result = match cli.command {
        Command::Exact(a) => commands::exact(a),
        Command::Approx(a) => commands::approx(a),
        Command::Simulate(a) => commands::simulate(a),
        Command::Irsa(a) => commands::irsa(a),
        Command::Feedback(a) => commands::feedback(a),
        Command::ReproduceFigure(a) => figures::reproduce(a),
    };
    match result {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
