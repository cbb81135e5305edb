//! Command-line driver for the `qimb` experiment lifecycle:
//! `generate → preprocess → train → tune-threshold → evaluate → compare`.
//!
//! Every command reads a TOML config (`--config`), applies `--set key=value`
//! overrides and an optional `--seed`, and writes only inside `--out`.
//! Exit codes: 0 success, 2 usage or config error, 3 data error,
//! 4 numerical failure.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

pub mod artifacts;
pub mod commands;
pub mod config;
pub mod error;

pub use error::{CliError, EXIT_DATA, EXIT_NUMERIC, EXIT_OK, EXIT_USAGE};

#[derive(Debug, Parser)]
#[command(name = "qimb", version, about = "Reward-shaped double dueling DQN for imbalanced classification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Draw a seeded Gaussian-mixture dataset.
    Generate(Common),
    /// Split, rebalance, impute and standardize a dataset.
    Preprocess(Common),
    /// Train q-imb, ddqn, mlp, mlp-smote or mlp-cost-sensitive.
    Train(Common),
    /// Pick a decision threshold reaching a target validation sensitivity.
    TuneThreshold(Common),
    /// Score a model on test data and write a metrics report.
    Evaluate(Common),
    /// Compare two evaluations of the same test set.
    Compare(Common),
}

/// Options shared by every command.
#[derive(Debug, Clone, Args)]
pub struct Common {
    /// TOML configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override a config value by dotted key, e.g. `qlearning.gamma=0.2`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Overrides every seed in the configuration.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "qimb-out")]
    pub out: PathBuf,
}

impl Common {
    pub fn new(config: Option<&Path>, out: &Path) -> Self {
        Self {
            config: config.map(Path::to_path_buf),
            set: Vec::new(),
            seed: None,
            out: out.to_path_buf(),
        }
    }
}

/// Parses `args` (program name first) and runs the command. Returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let result = match &cli.command {
        Command::Generate(c) => commands::generate(c),
        Command::Preprocess(c) => commands::preprocess(c),
        Command::Train(c) => commands::train(c),
        Command::TuneThreshold(c) => commands::tune_threshold(c),
        Command::Evaluate(c) => commands::evaluate(c),
        Command::Compare(c) => commands::compare(c),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.code
        }
    }
}
