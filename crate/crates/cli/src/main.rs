mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use aoi_core::{PolicySpec, SolveConfig};

#[derive(Debug, Parser)]
#[command(
    name = "aoi-sched",
    version,
    about = "Age-optimal switch/skip scheduling of status updates"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Solve the MDP and write the tabular and threshold policies.
    Solve(SolveArgs),
    /// Simulate a policy and print its report as JSON.
    Simulate(SimulateArgs),
    /// Solve the MDP and write its action maps as CSV.
    Policymap(PolicymapArgs),
    /// Compare myopic and optimal policies over a grid of arrival rates.
    Sweep(SweepArgs),
}

#[derive(Debug, Clone, Args)]
pub struct InstanceArgs {
    /// Arrival probability per slot.
    #[arg(long)]
    pub p: f64,
    /// Slots per transmission.
    #[arg(long)]
    pub d: u32,
    /// AoI truncation bound [default: max(10 d, ceil(4 / p) + d)].
    #[arg(long = "delta-m")]
    pub delta_m: Option<u32>,
}

#[derive(Debug, Clone, Args)]
pub struct SolverArgs {
    /// Stop once the span of the Bellman residual is below this.
    #[arg(long, default_value_t = SolveConfig::default().tol)]
    pub tol: f64,
    #[arg(long = "max-iters", default_value_t = SolveConfig::default().max_iters)]
    pub max_iters: usize,
}

#[derive(Debug, Args)]
pub struct SolveArgs {
    #[command(flatten)]
    pub instance: InstanceArgs,
    #[command(flatten)]
    pub solver: SolverArgs,
    /// Also run plain value iteration and require the same policy.
    #[arg(long)]
    pub verify: bool,
    /// Also write the per-iteration convergence trace.
    #[arg(long)]
    pub debug: bool,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// myopic | always-switch | threshold:<file.json> | tabular:<file.json>
    pub policy: PolicySpec,
    #[command(flatten)]
    pub instance: InstanceArgs,
    /// Horizon in slots.
    #[arg(long = "T", default_value_t = 1_000_000)]
    pub horizon: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Censor epochs longer than this many slots.
    #[arg(long = "epoch-cap")]
    pub epoch_cap: Option<u64>,
    /// Also write the report and a manifest into this directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PolicymapArgs {
    #[command(flatten)]
    pub instance: InstanceArgs,
    #[command(flatten)]
    pub solver: SolverArgs,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// Comma-separated values, or start:step:end.
    #[arg(long = "p-grid", default_value = "0.01:0.02:0.99")]
    pub p_grid: String,
    #[arg(long)]
    pub d: u32,
    #[arg(long = "delta-m")]
    pub delta_m: Option<u32>,
    #[arg(long, default_value_t = SolveConfig::default().tol)]
    pub tol: f64,
    #[arg(long = "T", default_value_t = 1_000_000)]
    pub horizon: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads (0: one per core).
    #[arg(long, default_value_t = 0)]
    pub jobs: usize,
    /// Comma-separated subset of myopic, always-switch, optimal.
    #[arg(long, default_value = "myopic,optimal")]
    pub policies: String,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("AOI_SCHED_LOG", "warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Solve(a) => commands::solve(&a),
        Command::Simulate(a) => commands::simulate(&a),
        Command::Policymap(a) => commands::policymap(&a),
        Command::Sweep(a) => commands::sweep(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(commands::exit_code(&e))
        }
    }
}
