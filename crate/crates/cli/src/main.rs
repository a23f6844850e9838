//! Command-line front end for the risk-averse MDP solver.
//!
//! Five subcommands cover the pipeline: `validate` checks a model against
//! the structural assumptions, `solve` computes an AVaR-optimal policy and
//! exports it, `simulate` replays an exported policy with Monte Carlo
//! rollouts, `compare` puts the risk-averse policy side by side with the
//! risk-neutral baseline, and `generate` emits random grid deployment
//! graphs. Outputs are plain JSON and CSV; identical inputs and seeds
//! produce byte-identical files, so plots can be regenerated exactly.

mod commands;
mod model;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use avar_mdp::augment::AugmentError;
use avar_mdp::baseline::BaselineError;
use avar_mdp::mdp::MdpError;
use avar_mdp::risk::RiskError;
use avar_mdp::sim::SimError;
use avar_mdp::solver::SolverError;
use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

/// A command failure carrying its process exit code: 1 for an output file
/// that cannot be written, 2 for invalid input, 3 for a violated model
/// assumption, 4 for an LP solver failure, 5 for a policy that does not
/// cover a reached state.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub fn runtime(message: impl Into<String>) -> Self {
        Failure { code: 1, message: message.into() }
    }

    pub fn invalid(message: impl Into<String>) -> Self {
        Failure { code: 2, message: message.into() }
    }

    pub fn assumption(message: impl Into<String>) -> Self {
        Failure { code: 3, message: message.into() }
    }
}

impl From<MdpError> for Failure {
    fn from(e: MdpError) -> Self {
        Failure::invalid(e.to_string())
    }
}

impl From<AugmentError> for Failure {
    fn from(e: AugmentError) -> Self {
        Failure::invalid(e.to_string())
    }
}

impl From<SolverError> for Failure {
    fn from(e: SolverError) -> Self {
        let code = match &e {
            SolverError::PolicyGap { .. } => 5,
            SolverError::InvalidParameter { .. }
            | SolverError::BetaMismatch { .. }
            | SolverError::Model(_) => 2,
            SolverError::Infeasible
            | SolverError::Unbounded
            | SolverError::Backend(_)
            | SolverError::Risk(_) => 4,
        };
        Failure { code, message: e.to_string() }
    }
}

impl From<SimError> for Failure {
    fn from(e: SimError) -> Self {
        let code = match &e {
            SimError::PolicyGap { .. } => 5,
            SimError::EnumerationBudget { .. } | SimError::NoRuns => 2,
            SimError::Risk(_) => 4,
        };
        Failure { code, message: e.to_string() }
    }
}

impl From<RiskError> for Failure {
    fn from(e: RiskError) -> Self {
        let code = match &e {
            RiskError::InvalidTau { .. } | RiskError::InvalidParameter { .. } => 2,
            _ => 4,
        };
        Failure { code, message: e.to_string() }
    }
}

impl From<BaselineError> for Failure {
    fn from(e: BaselineError) -> Self {
        Failure::invalid(e.to_string())
    }
}

#[derive(Parser)]
#[command(
    name = "avar-mdp",
    version,
    about = "Risk-averse policies for total-cost MDPs: minimize the tail mean of total \
             cost instead of its expectation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a model against the solver's structural assumptions
    Validate(ValidateArgs),
    /// Compute the AVaR-optimal policy and export it
    Solve(SolveArgs),
    /// Replay an exported policy with Monte Carlo rollouts
    Simulate(SimulateArgs),
    /// Pit the risk-averse policy against the risk-neutral baseline
    Compare(CompareArgs),
    /// Generate a random grid deployment graph
    Generate(GenerateArgs),
}

#[derive(Args)]
struct ValidateArgs {
    /// Model file: MDP JSON or deployment graph JSON
    input: PathBuf,
    /// Tail level in (0, 1) for the reported gap table [default: 0.5]
    #[arg(long)]
    tau: Option<f64>,
    /// JSON file supplying any long flag; explicit flags win
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct SolveArgs {
    /// Model file: MDP JSON or deployment graph JSON
    input: PathBuf,
    /// Tail level in (0, 1): the mean of the worst (1 - tau) share of total
    /// cost is minimized [default: 0.5]
    #[arg(long)]
    tau: Option<f64>,
    /// Pick the smallest horizon whose truncation error bound is below this
    #[arg(long, conflicts_with = "horizon")]
    epsilon: Option<f64>,
    /// Stop every trajectory after this many steps instead
    #[arg(long)]
    horizon: Option<u32>,
    /// Requested cost-grid level count [default: enough for a step of K_lower]
    #[arg(long)]
    levels: Option<u32>,
    /// Solve every stride-th threshold on the s-grid; 1 is exact [default: 1]
    #[arg(long)]
    stride: Option<u32>,
    /// Solution JSON path; the theta CSV sits next to it [default: solution.json]
    #[arg(long)]
    out: Option<PathBuf>,
    /// JSON file supplying any long flag; explicit flags win
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    /// Model file: MDP JSON or deployment graph JSON
    input: PathBuf,
    /// Exported solution JSON to replay
    #[arg(long)]
    solution: Option<PathBuf>,
    /// Steps before a rollout times out; augmented policies default to their
    /// exported horizon, stationary ones have no default
    #[arg(long)]
    horizon: Option<u32>,
    /// Number of rollouts [default: 1000]
    #[arg(long)]
    runs: Option<u64>,
    /// Root RNG seed; run i draws from stream i [default: 0]
    #[arg(long)]
    seed: Option<u64>,
    /// Tail level in (0, 1) for the reported VaR and AVaR [default: 0.5]
    #[arg(long)]
    tau: Option<f64>,
    /// Count runs whose cost strictly exceeds this threshold
    #[arg(long)]
    deadline: Option<f64>,
    /// Base path for the batch and histogram CSVs [default: simulation]
    #[arg(long)]
    out: Option<PathBuf>,
    /// JSON file supplying any long flag; explicit flags win
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct CompareArgs {
    /// Model file: MDP JSON or deployment graph JSON
    input: PathBuf,
    /// Tail level in (0, 1) for the risk-averse solve [default: 0.5]
    #[arg(long)]
    tau: Option<f64>,
    /// Extra tail levels; each gets its own solve and theta CSV
    #[arg(long, value_delimiter = ',')]
    taus: Vec<f64>,
    /// Pick the smallest horizon whose truncation error bound is below this
    #[arg(long, conflicts_with = "horizon")]
    epsilon: Option<f64>,
    /// Stop every trajectory after this many steps instead
    #[arg(long)]
    horizon: Option<u32>,
    /// Requested cost-grid level count [default: enough for a step of K_lower]
    #[arg(long)]
    levels: Option<u32>,
    /// Solve every stride-th threshold on the s-grid; 1 is exact [default: 1]
    #[arg(long)]
    stride: Option<u32>,
    /// Number of rollouts per policy, drawn from shared seeds [default: 1000]
    #[arg(long)]
    runs: Option<u64>,
    /// Root RNG seed; run i draws from stream i on both policies [default: 0]
    #[arg(long)]
    seed: Option<u64>,
    /// Count runs whose cost strictly exceeds this threshold
    #[arg(long)]
    deadline: Option<f64>,
    /// Base path for the exported policies and theta CSVs [default: compare]
    #[arg(long)]
    out: Option<PathBuf>,
    /// JSON file supplying any long flag; explicit flags win
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct GenerateArgs {
    /// Grid width, at least 2
    width: u32,
    /// Grid height, at least 2
    height: u32,
    /// Speed options per edge, between 1 and 3
    options: u32,
    /// Generator seed [default: 0]
    #[arg(long)]
    seed: Option<u64>,
    /// Graph JSON path; omitted means stdout
    #[arg(long)]
    out: Option<PathBuf>,
    /// JSON file supplying any long flag; explicit flags win
    #[arg(long)]
    config: Option<PathBuf>,
}

/// Optional JSON companion to the flags, same field names as the long
/// options. Any field a flag also sets is overridden by the flag.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub tau: Option<f64>,
    pub taus: Option<Vec<f64>>,
    pub epsilon: Option<f64>,
    pub horizon: Option<u32>,
    pub levels: Option<u32>,
    pub stride: Option<u32>,
    pub runs: Option<u64>,
    pub seed: Option<u64>,
    pub deadline: Option<f64>,
    pub out: Option<PathBuf>,
    pub solution: Option<PathBuf>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, Failure> {
        let Some(path) = path else {
            return Ok(FileConfig::default());
        };
        let text = model::read_text(path)?;
        serde_json::from_str(&text)
            .map_err(|e| Failure::invalid(format!("{}: {e}", path.display())))
    }
}

pub fn resolve_tau(tau: Option<f64>) -> Result<f64, Failure> {
    let tau = tau.unwrap_or(0.5);
    if tau > 0.0 && tau < 1.0 {
        Ok(tau)
    } else {
        Err(Failure::invalid(format!("tau must lie strictly in (0, 1), got {tau}")))
    }
}

pub fn resolve_stride(stride: Option<u32>) -> Result<u32, Failure> {
    let stride = stride.unwrap_or(1);
    if stride >= 1 {
        Ok(stride)
    } else {
        Err(Failure::invalid("stride must be at least 1"))
    }
}

pub fn resolve_runs(runs: Option<u64>) -> Result<u64, Failure> {
    let runs = runs.unwrap_or(1000);
    if runs >= 1 {
        Ok(runs)
    } else {
        Err(Failure::invalid("runs must be at least 1"))
    }
}

/// How the surrogate horizon is chosen: an error target or a fixed length.
pub enum HorizonChoice {
    Epsilon(f64),
    Fixed(u32),
}

/// Merges the flag pair with the config pair. Flags take the pair over
/// entirely when either one is given, so a config horizon cannot silently
/// fight a command-line epsilon.
pub fn resolve_horizon_choice(
    flag_epsilon: Option<f64>,
    flag_horizon: Option<u32>,
    file_epsilon: Option<f64>,
    file_horizon: Option<u32>,
) -> Result<HorizonChoice, Failure> {
    let (epsilon, horizon) = if flag_epsilon.is_some() || flag_horizon.is_some() {
        (flag_epsilon, flag_horizon)
    } else {
        (file_epsilon, file_horizon)
    };
    match (epsilon, horizon) {
        (Some(e), None) => Ok(HorizonChoice::Epsilon(e)),
        (None, Some(d)) => Ok(HorizonChoice::Fixed(d)),
        (None, None) => Err(Failure::invalid(
            "exactly one of --epsilon and --horizon is required (flag or config field)",
        )),
        (Some(_), Some(_)) => Err(Failure::invalid(
            "--epsilon and --horizon are mutually exclusive (flag or config field)",
        )),
    }
}

fn main() -> ExitCode {
    // Restore the default SIGPIPE disposition so piping into `head` ends the
    // process quietly instead of panicking on a closed stdout.
    #[cfg(unix)]
    unsafe {
        libc::signal(libc::SIGPIPE, libc::SIG_DFL);
    }
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Validate(args) => commands::validate(&args),
        Command::Solve(args) => commands::solve(&args),
        Command::Simulate(args) => commands::simulate(&args),
        Command::Compare(args) => commands::compare(&args),
        Command::Generate(args) => commands::generate(&args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("error: {}", failure.message);
            ExitCode::from(failure.code)
        }
    }
}
