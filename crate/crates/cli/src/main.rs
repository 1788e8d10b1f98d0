//! `kfmc`: generate synthetic data, complete matrices, stream columns, extend
//! a trained dictionary to new columns, and evaluate sampling bounds.
//!
//! Exit codes: 0 on success, 2 for usage or input errors, 3 for numerical failures.
//! `KFMC_THREADS` caps the worker pool.

mod bounds;
mod common;
mod complete;
mod gen;
mod ose;
mod stream;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

use common::CliError;

#[derive(Parser)]
#[command(
    name = "kfmc",
    version,
    about = "Kernelized factorization matrix completion"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset and missing-entry mask.
    Gen(gen::GenArgs),
    /// Batch completion with KFMC or the low-rank baseline.
    Complete(complete::CompleteArgs),
    /// Online completion, one column at a time.
    Stream(stream::StreamArgs),
    /// Complete new columns against a saved dictionary.
    Ose(ose::OseArgs),
    /// Rank predictions and minimum sampling rates.
    Bounds(bounds::BoundsArgs),
}

fn configure_threads() -> Result<(), CliError> {
    let Ok(raw) = std::env::var("KFMC_THREADS") else {
        return Ok(());
    };
    let n: usize = raw.trim().parse().ok().filter(|&n| n > 0).ok_or_else(|| {
        CliError::Input(format!(
            "KFMC_THREADS must be a positive integer, got {raw:?}"
        ))
    })?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Input(format!("cannot size thread pool: {e}")))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    let result = configure_threads().and_then(|()| match cli.command {
        Command::Gen(a) => gen::run(&a),
        Command::Complete(a) => complete::run(&a),
        Command::Stream(a) => stream::run(&a),
        Command::Ose(a) => ose::run(&a),
        Command::Bounds(a) => bounds::run(&a),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("kfmc: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
