//! Command-line front end. Every command validates its inputs, computes all
//! results in memory and only then writes its files plus a `manifest.json`.

mod commands;
pub mod manifest;
pub mod output;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::learn::LearnError;
use crate::model::ModelError;
use crate::risk::RiskError;
use crate::solver::SolverError;

pub const EXIT_OK: i32 = 0;
pub const EXIT_IO: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NONCONVERGENCE: i32 = 3;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Numerical(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

impl CliError {
    pub fn config(msg: impl Into<String>) -> Self {
        CliError::Config(msg.into())
    }

    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Numerical(_) => EXIT_NONCONVERGENCE,
            CliError::Io { .. } => EXIT_IO,
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<SolverError> for CliError {
    fn from(e: SolverError) -> Self {
        match e {
            SolverError::Model(m) => m.into(),
            SolverError::NonConvergence { .. } | SolverError::Singular => CliError::Numerical(e.to_string()),
            SolverError::InvalidArgument(_) => CliError::Config(e.to_string()),
        }
    }
}

impl From<RiskError> for CliError {
    fn from(e: RiskError) -> Self {
        match e {
            RiskError::Model(m) => m.into(),
            RiskError::Solver(s) => s.into(),
            RiskError::Singular => CliError::Numerical(e.to_string()),
            _ => CliError::Config(e.to_string()),
        }
    }
}

impl From<LearnError> for CliError {
    fn from(e: LearnError) -> Self {
        CliError::Config(e.to_string())
    }
}

#[derive(Parser, Debug)]
#[command(name = "honeynet", version, about = "Engagement policies and risk analytics for adaptive honeynets")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// Scenario JSON file.
    #[arg(long, value_name = "PATH")]
    pub scenario: PathBuf,
    /// Output directory, created if missing.
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    /// Base seed for every random stream.
    #[arg(long, value_name = "U64")]
    pub seed: Option<u64>,
    /// Scenario override at a dotted path, e.g. `rates.3.lambda=0.4`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

#[derive(Args, Debug, Clone)]
pub struct PolicySource {
    /// `solve` for the optimal policy, or a policy JSON file.
    #[arg(long, value_name = "solve|PATH", default_value = "solve")]
    pub policy: String,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Optimal engagement policy by value iteration.
    Solve {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = crate::solver::DEFAULT_TOL)]
        tol: f64,
        #[arg(long, default_value_t = crate::solver::DEFAULT_MAX_ITER)]
        max_iter: usize,
    },
    /// Occupancy, first-passage and attraction metrics of a policy.
    Analyze {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        policy: PolicySource,
        /// Initial state of the occupancy curves (normal zone by default).
        #[arg(long)]
        start: Option<usize>,
        /// Target honeypot (scenario target by default).
        #[arg(long)]
        target: Option<usize>,
        /// Explicit comma-separated time grid.
        #[arg(long, value_delimiter = ',')]
        times: Option<Vec<f64>>,
        /// Scale of the log-spaced default grid.
        #[arg(long)]
        horizon: Option<f64>,
        #[arg(long, default_value_t = 200)]
        points: usize,
    },
    /// Engagement criteria over a parameter grid.
    Sweep {
        #[command(subcommand)]
        kind: SweepKind,
    },
    /// Monte Carlo trajectories and estimates.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        policy: PolicySource,
        #[arg(long)]
        start: Option<usize>,
        #[arg(long)]
        target: Option<usize>,
        /// Discounted-utility rollouts.
        #[arg(long, default_value_t = 10_000)]
        samples: usize,
        /// Hitting-time samples per source state.
        #[arg(long, default_value_t = 10_000)]
        hitting_samples: usize,
        /// Trajectories written to the JSON-lines log.
        #[arg(long, default_value_t = 10)]
        trajectories: usize,
        /// Epoch cap per rollout (tail-bound horizon by default).
        #[arg(long)]
        horizon_epochs: Option<usize>,
        /// Censoring time when the analytic mean is infinite.
        #[arg(long, default_value_t = 1e6)]
        censor_cap: f64,
    },
    /// SMDP Q-learning against the simulator.
    Learn {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        flags: LearnFlags,
    },
    /// Re-runs the command recorded in a manifest.
    Replay {
        #[arg(long, value_name = "PATH")]
        manifest: PathBuf,
        /// Output directory (the recorded one by default).
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
    },
}

#[derive(Args, Debug, Clone)]
pub struct GridFlags {
    /// Explicit comma-separated grid.
    #[arg(long, value_delimiter = ',')]
    pub grid: Option<Vec<f64>>,
    #[arg(long)]
    pub from: Option<f64>,
    #[arg(long)]
    pub to: Option<f64>,
    #[arg(long)]
    pub points: Option<usize>,
}

#[derive(Args, Debug, Clone)]
pub struct SweepFlags {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub grid: GridFlags,
    /// Keep this policy file fixed instead of re-solving each point.
    #[arg(long, value_name = "PATH")]
    pub fixed_policy: Option<PathBuf>,
    /// Start state of the main table (normal zone by default).
    #[arg(long)]
    pub start: Option<usize>,
}

#[derive(Subcommand, Debug)]
pub enum SweepKind {
    /// Attraction response rate from the normal zone to the bridges.
    Persistence(SweepFlags),
    /// Failure probability of the attraction action.
    Intelligence(SweepFlags),
    /// Target value over penetration probability × investigation reward.
    Tradeoff {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', default_value = "0,0.2,0.4,0.6,0.8")]
        penetration: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_value = "0.5,1,1.5,2,2.5")]
        reward: Vec<f64>,
        #[arg(long)]
        target: Option<usize>,
    },
}

#[derive(Args, Debug, Clone, Default)]
pub struct LearnFlags {
    #[arg(long)]
    pub kc: Option<f64>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long)]
    pub steps: Option<u64>,
    #[arg(long)]
    pub replications: Option<usize>,
    /// Step at which ε starts its linear decay.
    #[arg(long)]
    pub decay_start: Option<u64>,
    /// ε reached at the final step.
    #[arg(long)]
    pub decay_end: Option<f64>,
    /// Never explore Eject at non-absorbing states.
    #[arg(long)]
    pub forbid_eject: bool,
    #[arg(long)]
    pub start: Option<usize>,
    #[arg(long)]
    pub track_state: Option<usize>,
    #[arg(long)]
    pub track_action: Option<String>,
    /// Also run these kc values with the same seed and report final-window errors.
    #[arg(long, value_delimiter = ',')]
    pub compare_kc: Option<Vec<f64>>,
    /// Steps in the first/final convergence windows.
    #[arg(long, default_value_t = 500)]
    pub window: u64,
}

/// Parses `argv` (including the binary name) and runs it; returns the exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let args: Vec<String> = argv.iter().skip(1).map(|a| a.to_string_lossy().into_owned()).collect();
    match commands::dispatch(cli.command, &args) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

/// Removes `--out DIR` / `--out=DIR` from a command line.
pub(crate) fn strip_out(args: &[String]) -> Vec<String> {
    let mut out = Vec::with_capacity(args.len());
    let mut skip = false;
    for a in args {
        if skip {
            skip = false;
        } else if a == "--out" {
            skip = true;
        } else if !a.starts_with("--out=") {
            out.push(a.clone());
        }
    }
    out
}
