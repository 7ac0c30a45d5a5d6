//! `evcharge`: fit demand models, plan prices and purchases, and run
//! closed-loop simulations from files.

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use evcharge_core::simulate::{Execution, SweepMode, SweepParam};
use evcharge_core::{Policy, Profile};

#[derive(Debug, Parser)]
#[command(name = "evcharge", version, about = "Dynamic pricing and storage planning for EV charging networks")]
pub struct Cli {
    /// Where to write the run manifest (default: next to the first output).
    #[arg(long, global = true)]
    manifest: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic wholesale price and renewable series.
    Synth(SynthArgs),
    /// Write a random demand model.
    SynthModel(SynthModelArgs),
    /// Write a random-price demand history drawn from a model.
    GenHistory(GenHistoryArgs),
    /// Estimate a demand model from an observation history.
    Fit(FitArgs),
    /// Plan one day of prices and purchases.
    Plan(PlanArgs),
    /// Run one closed-loop day against a true demand model.
    Simulate(SimulateArgs),
    /// Repeat planning or simulation over values of beta or eta.
    Sweep(SweepArgs),
    /// Run greedy and DP closed loops on the same seed.
    Compare(CompareArgs),
    /// Re-run a recorded command and check its output digests.
    Replay(ReplayArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 24)]
    pub hours: usize,
    #[arg(long, default_value = "diurnal")]
    pub profile: Profile,
    /// Output `hour,value` file of wholesale prices.
    #[arg(long)]
    pub prices: PathBuf,
    /// Output `hour,value` file of renewable generation.
    #[arg(long)]
    pub renewable: PathBuf,
}

#[derive(Debug, Args)]
pub struct SynthModelArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub stations: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct GenHistoryArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 500)]
    pub horizons: usize,
    #[arg(long, default_value_t = 1.0)]
    pub noise_std: f64,
    #[arg(long, default_value_t = 0.0)]
    pub price_min: f64,
    #[arg(long, default_value_t = 40.0)]
    pub price_max: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[arg(long)]
    pub observations: PathBuf,
    #[arg(long)]
    pub stations: usize,
    /// RLS forgetting factor.
    #[arg(long, default_value_t = 1.0)]
    pub lambda: f64,
    /// Initial RLS gain is this multiple of the identity.
    #[arg(long, default_value_t = 1.0)]
    pub gain_scale: f64,
    /// Batch least squares instead of RLS.
    #[arg(long)]
    pub batch: bool,
    /// Ridge penalty for --batch.
    #[arg(long, default_value_t = 0.0, requires = "batch")]
    pub ridge: f64,
    #[arg(long)]
    pub out: PathBuf,
    /// Per-step prediction errors (RLS) or residuals (batch), `horizon,station,error`.
    #[arg(long)]
    pub errors: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ScenarioArgs {
    #[arg(long)]
    pub prices: PathBuf,
    #[arg(long)]
    pub renewable: PathBuf,
    /// TOML economic parameters (default: the reference parameter set).
    #[arg(long)]
    pub params: Option<PathBuf>,
    /// Initial storage in MWh (default: half the capacity).
    #[arg(long)]
    pub initial_storage: Option<f64>,
    /// Storage grid points for the DP policy.
    #[arg(long, default_value_t = 201)]
    pub grid: usize,
}

#[derive(Debug, Args)]
pub struct PlanArgs {
    #[command(flatten)]
    pub scenario: ScenarioArgs,
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, default_value = "dp")]
    pub policy: Policy,
    #[arg(long)]
    pub out: PathBuf,
    /// Write the structured document instead of the flat table.
    #[arg(long)]
    pub json: bool,
    /// DP only: also write the value table as `stage,storage,value`.
    #[arg(long)]
    pub value_table: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct MarketArgs {
    #[command(flatten)]
    pub scenario: ScenarioArgs,
    /// Model that generates realized demand.
    #[arg(long)]
    pub true_model: PathBuf,
    /// Planner's starting estimate (default: the true model).
    #[arg(long)]
    pub initial_model: Option<PathBuf>,
    #[arg(long, default_value_t = 1.0)]
    pub noise_std: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "receding")]
    pub execution: Execution,
    /// RLS forgetting factor.
    #[arg(long, default_value_t = 0.98)]
    pub lambda: f64,
    #[arg(long, default_value_t = 1.0)]
    pub gain_scale: f64,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub market: MarketArgs,
    #[arg(long, default_value = "dp")]
    pub policy: Policy,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub market: MarketArgs,
    #[arg(long, default_value = "dp")]
    pub policy: Policy,
    #[arg(long)]
    pub param: SweepParam,
    #[arg(long, value_delimiter = ',', required = true)]
    pub values: Vec<f64>,
    #[arg(long, default_value = "plan")]
    pub mode: SweepMode,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[command(flatten)]
    pub market: MarketArgs,
    /// Directory for `greedy`, `dp` and `comparison.json`.
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    #[arg(long = "from")]
    pub from: PathBuf,
}

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let cli = Cli::parse();
    match commands::run(cli, args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
