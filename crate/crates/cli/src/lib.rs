//! Batch front end: `simulate`, `analyze`, `evaluate` and `bench`.
//!
//! Every output is a function of the inputs, the resolved config and the
//! seed. JSON is written with sorted keys and shortest round-trip floats,
//! so reruns produce identical bytes regardless of the worker count.

pub mod commands;
pub mod config;
pub mod error;
pub mod output;
pub mod plots;
pub mod records;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

use config::{Overrides, Resolved};
pub use error::{CliError, Result};

#[derive(Debug, Parser)]
#[command(
    name = "rtn",
    version,
    about = "Simulate and decompose random telegraph noise signals"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub overrides: Overrides,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate labeled datasets: signal CSVs, ground-truth sidecars, manifest
    Simulate,
    /// Analyze signal CSV files or directories of them
    Analyze { inputs: Vec<PathBuf> },
    /// Score results against ground truth
    Evaluate {
        /// Ground-truth directory [default: <out>/truth]
        #[arg(long)]
        truth: Option<PathBuf>,
        /// Result directory [default: <out>/results]
        #[arg(long)]
        results: Option<PathBuf>,
    },
    /// Simulate, analyze and evaluate in one resumable run
    Bench,
}

pub fn run(cli: Cli) -> Result<()> {
    let mut resolved = Resolved::from_overrides(&cli.overrides)?;
    match cli.command {
        Command::Simulate => commands::simulate(&resolved).map(drop),
        Command::Analyze { inputs } => {
            if !inputs.is_empty() {
                resolved.inputs = inputs;
            }
            commands::analyze_files(&resolved).map(drop)
        }
        Command::Evaluate { truth, results } => {
            resolved.truth = truth.or(resolved.truth);
            resolved.results = results.or(resolved.results);
            commands::evaluate(&resolved).map(drop)
        }
        Command::Bench => commands::bench(&resolved).map(drop),
    }
}

/// Parses `args` and runs; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
