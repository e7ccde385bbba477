//! `adrl` command-line runner: configuration, subcommands and artifacts.

pub mod commands;
pub mod config;
pub mod curve;
pub mod selftest;

use std::fmt;
use std::path::PathBuf;

use adrl_core::AdrlError;
use clap::{Parser, Subcommand};

pub use config::{Inputs, Manifest, RunConfig};
pub use curve::emit_learning_curve;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Core(AdrlError),
    Selftest(String),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Core(e) => write!(f, "{e}"),
            CliError::Selftest(m) => write!(f, "selftest failed: {m}"),
        }
    }
}

impl From<AdrlError> for CliError {
    fn from(e: AdrlError) -> Self {
        CliError::Core(e)
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Core(e) => match e {
                AdrlError::Config(_) => 2,
                AdrlError::Numerical(_) | AdrlError::Evaluation { .. } => 4,
                _ => 3,
            },
            CliError::Selftest(_) => 5,
        }
    }

    /// Kind tag used in the one-line diagnostic on stderr.
    pub fn kind(&self) -> &'static str {
        match self.exit_code() {
            2 => "usage",
            3 => "model",
            4 => "numerical",
            _ => "selftest",
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "adrl", version, about = "Adversarial penalty learning with certified dual gaps")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Flat key = value config file, or a previous run's manifest.toml.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory (overrides ADRL_OUT_DIR and `out_dir`).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads (0 = all cores).
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// Config override, repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub set: Vec<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a generating function.
    TrainAdrl {
        #[arg(long)]
        iters: Option<usize>,
        #[arg(long)]
        estimator: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
        /// Start from this checkpoint instead of a fresh initialisation.
        #[arg(long)]
        init: Option<PathBuf>,
    },
    /// Dual bound of a checkpoint (zero penalty without one).
    DualBound {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        dataset_seed: Option<u64>,
    },
    /// Value of a policy on sampled (or enumerated) paths.
    EvalPolicy {
        /// greedy, uniform, closed-form or oracle.
        #[arg(long, default_value = "greedy")]
        policy: String,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Exact backward induction on a toy problem.
    Oracle,
    /// Direct empirical risk minimisation with the bracketing stopping rule.
    Derm {
        /// A gap-report `report.txt` supplying the bounds.
        #[arg(long)]
        bounds: Option<PathBuf>,
    },
    /// Dual and greedy primal bounds with their gap.
    GapReport {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Use the exact value functions from the oracle (toy problems).
        #[arg(long)]
        oracle_pinned: bool,
    },
    /// Print the resolved model and every config default.
    DumpModel,
    /// Enumerated-oracle invariant suite.
    Selftest,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::TrainAdrl { .. } => "train-adrl",
            Command::DualBound { .. } => "dual-bound",
            Command::EvalPolicy { .. } => "eval-policy",
            Command::Oracle => "oracle",
            Command::Derm { .. } => "derm",
            Command::GapReport { .. } => "gap-report",
            Command::DumpModel => "dump-model",
            Command::Selftest => "selftest",
        }
    }
}

/// Parses `argv` (including the program name), runs the subcommand and
/// returns the process exit status.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match commands::execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("adrl {}: [{}] {e}", cli.command.name(), e.kind());
            e.exit_code()
        }
    }
}
