//! `orthomode` command-line front end.
//!
//! Exit status: 0 success, 2 configuration or usage, 3 infeasible mode or
//! window, 4 integrator breakdown, 5 fit failure, 6 file or format error,
//! 1 anything else.

mod commands;
mod config;

use std::fmt;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use orthomode::Error;

use crate::commands::Run;
use crate::config::{Overrides, RunConfig};

#[derive(Parser)]
#[command(name = "orthomode", version, about = "Orthogonal temporal-mode photon transfer")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Subcommand)]
enum Command {
    /// Emission and absorption waveforms for the requested modes.
    Synth,
    /// Qubit ground population versus drive truncation time.
    EmitSweep,
    /// Delay sweeps, transfer matrix, selectivity and fit.
    Transfer,
    /// Receiver population over a grid of carrier detunings.
    Detuning,
    /// Fit link delay and loss to measured delay sweeps.
    Fit,
}

#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn config(message: impl Into<String>) -> Self {
        CliError { code: 2, message: message.into() }
    }

    pub fn io(message: impl Into<String>) -> Self {
        CliError { code: 6, message: message.into() }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Domain(_) | Error::Usage(_) => 2,
            Error::Infeasible { .. } | Error::Window { .. } => 3,
            Error::Integrator { .. } => 4,
            Error::Fit { .. } => 5,
            Error::Format(_) | Error::Io(_) | Error::Csv(_) | Error::Json(_) => 6,
            Error::Computation(_) => 1,
        };
        CliError { code, message: e.to_string() }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::io(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::io(e.to_string())
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let cfg = RunConfig::resolve(&cli.overrides)?;
    let (name, exec): (&'static str, fn(&Run) -> Result<(), CliError>) = match cli.command {
        Command::Synth => ("synth", commands::synth),
        Command::EmitSweep => ("emit-sweep", commands::emit_sweep),
        Command::Transfer => ("transfer", commands::transfer),
        Command::Detuning => ("detuning", commands::detuning),
        Command::Fit => ("fit", commands::fit),
    };
    let run = Run::new(name, cfg)?;
    exec(&run)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code)
        }
    }
}
