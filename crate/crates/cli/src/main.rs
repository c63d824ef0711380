//! `finn`: simulate paths, train hedging-loss pricers, evaluate them against
//! analytic oracles and price single options.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage error or missing
//! checkpoint, 3 invalid Heston parameters (Feller), 4 training aborted,
//! 5 grid or oracle mismatch.

mod args;
mod commands;
mod config;

use std::fmt;
use std::process::ExitCode;

use clap::Parser;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    MissingCheckpoint(String),
    Core(finn_core::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        use finn_core::Error as E;
        match self {
            CliError::Usage(_) | CliError::MissingCheckpoint(_) => 2,
            CliError::Core(E::Heston(_)) => 3,
            CliError::Core(E::TrainingAborted { .. }) => 4,
            CliError::Core(E::GridMismatch(_)) => 5,
            CliError::Core(_) => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage: {m}"),
            CliError::MissingCheckpoint(p) => write!(f, "checkpoint not found: {p}"),
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}

impl From<finn_core::Error> for CliError {
    fn from(e: finn_core::Error) -> Self {
        CliError::Core(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Core(e.into())
    }
}

fn main() -> ExitCode {
    let cli = args::Cli::parse();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("finn: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
