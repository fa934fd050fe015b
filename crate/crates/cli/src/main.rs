use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod commands;
mod config;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("computation failed: {0}")]
    Compute(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Compute(_) => 1,
            CliError::Config(_) => 2,
        }
    }
}

/// Certified finite-size key rates for phase-matching QKD.
#[derive(Parser, Debug)]
#[command(name = "pmqkd", version)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Run configuration (JSON).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Certificate file to write (certify) or read (finite-rate, sweep).
    #[arg(long, global = true)]
    pub certificate: Option<PathBuf>,
    /// Output path; standard output when omitted.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Monte Carlo seed, overriding the config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for sweeps.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
}

#[derive(Subcommand, Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    /// Solve the dual SDP at the nominal values and write a verified certificate.
    Certify,
    /// Finite-size key rate from a stored certificate and nominal or observed counts.
    FiniteRate,
    /// Rates over a range of distances as CSV.
    Sweep,
    /// Search protocol parameters for the largest finite-size rate.
    Optimize,
    /// Monte Carlo coverage check of the concentration bounds.
    Validate,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
