//! Command-line front end: argument parsing, run manifests and error records.
//!
//! Every invocation writes `<command>.manifest.json` to the output directory
//! next to its outputs. Failures print one JSON error record to stderr and
//! return a nonzero exit code.

mod commands;
mod config;
mod manifest;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

pub use config::RunConfig;
pub use manifest::RunManifest;

pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "shadowtail", version, about = "Interrupted Pareto tails in firm-size data")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalOpts,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct GlobalOpts {
    /// Seed for all randomness; a random one is drawn and recorded if absent.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = ".")]
    pub out: PathBuf,
    /// Validate inputs and write the manifest without computing.
    #[arg(long, global = true)]
    pub dry_run: bool,
    /// Reject industries that are neither known financial nor known non-financial.
    #[arg(long, global = true)]
    pub strict: bool,
    /// File listing financial industries, one per line.
    #[arg(long, global = true)]
    pub classifier: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SectorArg {
    All,
    Financial,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SnapshotArgs {
    /// Snapshot CSV (`name,industry,assets,profits[,sales[,market_value]]`).
    pub snapshot: PathBuf,
    /// List year; taken from the digits of the file name when absent.
    #[arg(long)]
    pub year: Option<i32>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct RangeArgs {
    /// Lower end of the fit range; chosen automatically with --smax absent too.
    #[arg(long)]
    pub smin: Option<f64>,
    #[arg(long)]
    pub smax: Option<f64>,
    #[arg(long, value_enum, default_value = "all")]
    pub sector: SectorArg,
    /// Residual RMS bound for automatic range selection.
    #[arg(long, default_value_t = shadowtail::tailfit::DEFAULT_MAX_RMS)]
    pub max_rms: f64,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit the Pareto exponent: fit.json and ccdf.csv.
    Fit {
        #[command(flatten)]
        input: SnapshotArgs,
        #[command(flatten)]
        range: RangeArgs,
    },
    /// Missing top-tail mass: index.json and rank_gaps.csv.
    Index {
        #[command(flatten)]
        input: SnapshotArgs,
        #[command(flatten)]
        range: RangeArgs,
        #[arg(long, default_value_t = shadowtail::sbindex::DEFAULT_N_TOP)]
        ntop: usize,
    },
    /// Run the growth model once: size_rank.csv and simulate.json.
    Simulate {
        /// JSON run configuration.
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 0)]
        replica: u64,
    },
    /// Calibrate the shedding rate: calibration.json and objective.csv.
    Calibrate {
        #[arg(long)]
        config: PathBuf,
        /// Observed sizes: a snapshot CSV or a `rank,size` CSV.
        #[arg(long)]
        observed: PathBuf,
        /// Candidate rates, `start:end[:step]` or a comma list.
        #[arg(long, default_value = "0:30")]
        grid: String,
        #[arg(long, default_value_t = shadowtail::calibrate::DEFAULT_REPLICAS)]
        replicas: usize,
        /// Overrides the configuration's epsilon.
        #[arg(long)]
        epsilon: Option<f64>,
        /// Ranks entering the objective; defaults to min(1000, keep_top, observed).
        #[arg(long)]
        ranks: Option<usize>,
    },
    /// Kernel regression: curve.csv and regress.json.
    Regress {
        #[command(flatten)]
        input: SnapshotArgs,
        /// Regress next-year log assets on log assets against this snapshot
        /// instead of return on assets.
        #[arg(long)]
        next: Option<PathBuf>,
        #[arg(long)]
        next_year: Option<i32>,
        /// Bandwidth, or `auto`.
        #[arg(long, default_value = "auto")]
        bandwidth: String,
        #[arg(long, default_value_t = 100)]
        grid_size: usize,
    },
    /// Rank-size table with sector labels: rank.csv.
    Rankplot {
        #[command(flatten)]
        input: SnapshotArgs,
    },
    /// Exponent and index per year: series.csv.
    Series {
        /// Snapshot files; the list year comes from each file name.
        #[arg(required = true)]
        snapshots: Vec<PathBuf>,
        #[command(flatten)]
        range: RangeArgs,
        #[arg(long, default_value_t = shadowtail::sbindex::DEFAULT_N_TOP)]
        ntop: usize,
        /// Comparison series CSV `year,value_trillions`.
        #[arg(long)]
        compare: Option<PathBuf>,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Fit { .. } => "fit",
            Command::Index { .. } => "index",
            Command::Simulate { .. } => "simulate",
            Command::Calibrate { .. } => "calibrate",
            Command::Regress { .. } => "regress",
            Command::Rankplot { .. } => "rankplot",
            Command::Series { .. } => "series",
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] shadowtail::Error),
    #[error("{0}")]
    Usage(String),
    #[error("cannot write {path}: {source}")]
    Output { path: PathBuf, source: std::io::Error },
    #[error("invalid configuration {path}: {message}")]
    Config { path: PathBuf, message: String },
}

impl CliError {
    pub fn module(&self) -> &'static str {
        match self {
            CliError::Core(e) => e.module(),
            _ => "cli",
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Core(e) => e.kind(),
            CliError::Usage(_) => "usage",
            CliError::Output { .. } => "output",
            CliError::Config { .. } => "config",
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            _ => EXIT_RUNTIME,
        }
    }
}

#[derive(Debug, Serialize)]
pub struct ErrorRecord<'a> {
    pub error: ErrorBody<'a>,
}

#[derive(Debug, Serialize)]
pub struct ErrorBody<'a> {
    pub module: &'a str,
    pub kind: &'a str,
    pub message: String,
}

fn print_error(module: &str, kind: &str, message: String) {
    let rec = ErrorRecord {
        error: ErrorBody { module, kind, message },
    };
    eprintln!("{}", serde_json::to_string(&rec).expect("error record serialises"));
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn dispatch<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return 0;
            }
            let kind = match e.kind() {
                ErrorKind::InvalidSubcommand | ErrorKind::MissingSubcommand => "unknown_subcommand",
                ErrorKind::InvalidValue | ErrorKind::ValueValidation => "invalid_flag_value",
                _ => "usage",
            };
            let message = e.render().to_string().lines().next().unwrap_or_default().to_string();
            print_error("cli", kind, message);
            return EXIT_USAGE;
        }
    };
    match commands::run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            print_error(e.module(), e.kind(), e.to_string());
            e.exit_code()
        }
    }
}
