//! Command-line toolkit around the quantile factor library: panel CSV
//! ingestion, model fitting, fixed-b significance testing, Monte Carlo
//! studies, and critical-value table management. Outputs are plot-ready
//! CSV and JSON files, deterministic for a given input, flag set, and seed.

pub mod args;
pub mod commands;
pub mod ingest;

use clap::Parser;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Malformed input data tied to a specific line of the file.
    #[error("line {line}: {reason}")]
    Ingest { line: u64, reason: String },
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Lib(#[from] qfactor::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, CliError>;

/// Parses process arguments and dispatches. A nonzero exit code is produced
/// by the binary wrapper whenever this returns an error.
pub fn run() -> Result<()> {
    let cli = args::Cli::parse();
    match cli.command {
        args::Command::Fit(a) => commands::cmd_fit(&a),
        args::Command::Test(a) => commands::cmd_test(&a),
        args::Command::Simulate(a) => commands::cmd_simulate(&a),
        args::Command::Critvals(a) => commands::cmd_critvals(&a),
        args::Command::Knots(a) => commands::cmd_knots(&a),
    }
}
