//! `landex` command-line front end.
//!
//! [`run`] parses arguments, runs one subcommand and returns the process exit
//! code: 0 on success, 2 for usage errors, 3 for bad input data and 4 when an
//! estimation problem is numerically ill-posed.

mod config;
mod pipeline;
mod report;

use std::ffi::OsString;
use std::fmt;
use std::path::PathBuf;

use clap::{Args, CommandFactory, Parser, Subcommand};
use landex_core::error::{Classify, ErrorClass};

pub use config::Settings;

#[derive(Debug, Parser)]
#[command(name = "landex", version, about = "Price indices and returns for bundled virtual land sales")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Validate inputs and write one row per bundle transaction.
    Ingest(DataArgs),
    /// Hedonic index and coefficient table per denomination.
    Hedonic(DataArgs),
    /// Case-Shiller repeat-sales index and MOIC per denomination.
    Repeat(DataArgs),
    /// Summary statistics, correlations, settlement shares and the
    /// SAND/ETH relative price index.
    Stats(DataArgs),
    /// Run every analysis and write a markdown report.
    Report(DataArgs),
    /// Generate a synthetic market with known ground truth.
    Simulate(SimulateArgs),
}

#[derive(Debug, Args, Default, Clone)]
pub(crate) struct DataArgs {
    /// Parcel-level transactions CSV.
    #[arg(long, value_name = "PATH")]
    pub tx: Option<PathBuf>,
    /// Daily token prices in USD (`date,token,usd_price`).
    #[arg(long, value_name = "PATH")]
    pub prices: Option<PathBuf>,
    /// Unit of account; repeatable. Defaults to USD, ETH and SAND.
    #[arg(long, value_name = "DENOM")]
    pub denom: Vec<String>,
    /// Lower winsorization quantile.
    #[arg(long, value_name = "F")]
    pub winsor_low: Option<f64>,
    /// Upper winsorization quantile.
    #[arg(long, value_name = "F")]
    pub winsor_high: Option<f64>,
    /// Output directory (default `out`).
    #[arg(long, value_name = "DIR")]
    pub out_dir: Option<PathBuf>,
    /// Whether `price_amount` is each parcel's share or the bundle total.
    #[arg(long, value_name = "per-parcel|per-bundle")]
    pub row_price_mode: Option<String>,
    /// Normalize indices to 1 at this ISO week instead of the earliest.
    #[arg(long, value_name = "YYYY-WW")]
    pub base_week: Option<String>,
    /// Repeat-sales variance model.
    #[arg(long, value_name = "linear|quadratic")]
    pub variance_model: Option<String>,
    /// Accept settlement tokens outside ETH, WETH, SAND, DAI and USDC.
    #[arg(long)]
    pub lenient_tokens: bool,
    /// Flat key/value settings file; flags override it.
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    /// Overrides the seed in the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Generator settings (TOML); defaults are used for missing keys.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    #[arg(long, value_name = "DIR")]
    out_dir: Option<PathBuf>,
}

#[derive(Debug)]
pub(crate) enum CliError {
    Usage { message: String, usage: String },
    Failed { class: ErrorClass, message: String },
}

impl CliError {
    fn data(message: impl Into<String>) -> Self {
        CliError::Failed {
            class: ErrorClass::Data,
            message: message.into(),
        }
    }

    /// Wraps a library error with what was being done.
    fn from_core(context: impl fmt::Display, err: impl Classify + fmt::Display) -> Self {
        CliError::Failed {
            class: err.class(),
            message: format!("{context}: {err}"),
        }
    }

    fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage { .. } => 2,
            CliError::Failed {
                class: ErrorClass::Data,
                ..
            } => 3,
            CliError::Failed {
                class: ErrorClass::Numerical,
                ..
            } => 4,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage { message, usage } => write!(f, "error: {message}\n\n{usage}"),
            CliError::Failed {
                class: ErrorClass::Data,
                message,
            } => write!(f, "data error: {message}"),
            CliError::Failed {
                class: ErrorClass::Numerical,
                message,
            } => write!(f, "numerical error: {message}"),
        }
    }
}

fn usage_for(subcommand: &str) -> String {
    let mut cmd = Cli::command();
    cmd.build();
    match cmd.find_subcommand_mut(subcommand) {
        Some(sub) => sub.render_usage().to_string(),
        None => cmd.render_usage().to_string(),
    }
}

pub(crate) fn usage_error(subcommand: &str, message: impl Into<String>) -> CliError {
    CliError::Usage {
        message: message.into(),
        usage: usage_for(subcommand),
    }
}

/// Runs the command line in `argv` (program name first) and returns the exit
/// code. Progress goes to stdout, errors to stderr.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let result = match cli.command {
        Command::Ingest(a) => Settings::resolve("ingest", a).and_then(|s| pipeline::ingest(&s)),
        Command::Hedonic(a) => Settings::resolve("hedonic", a).and_then(|s| pipeline::hedonic(&s)),
        Command::Repeat(a) => Settings::resolve("repeat", a).and_then(|s| pipeline::repeat(&s)),
        Command::Stats(a) => Settings::resolve("stats", a).and_then(|s| pipeline::stats(&s)),
        Command::Report(a) => Settings::resolve("report", a).and_then(|s| pipeline::report(&s)),
        Command::Simulate(a) => pipeline::simulate(a.seed, a.config, a.out_dir),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{e}");
            e.exit_code()
        }
    }
}
