//! `bsde run <scenario.json>`, `bsde verify <solution.csv> <scenario.json>`,
//! `bsde sweep <template.json> <grid.json>`.
//!
//! Exit codes: 0 success, 1 input error, 2 solver non-convergence,
//! 3 verification violation. Failures print one JSON line on stderr.
//! `BSDE_THREADS` caps the number of worker threads.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod error;
mod io;
mod pipeline;
mod scenario;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use error::CliError;

#[derive(Parser)]
#[command(name = "bsde", version, about = "Solve and verify BSDEs on finite event trees")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve a scenario and write its artifacts.
    Run { scenario: PathBuf },
    /// Recheck a persisted solution against its scenario.
    Verify { solution: PathBuf, scenario: PathBuf },
    /// Run a scenario template over a parameter grid.
    Sweep { template: PathBuf, grid: PathBuf },
}

fn configure_threads() -> Result<(), CliError> {
    let Ok(raw) = std::env::var("BSDE_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| CliError::input(format!("BSDE_THREADS must be a positive integer, got `{raw}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::input(format!("thread pool: {e}")))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let err = CliError::input(e.to_string().lines().next().unwrap_or("invalid arguments").to_string());
            eprintln!("{}", err.to_line());
            return ExitCode::from(error::EXIT_INPUT as u8);
        }
    };
    let result = configure_threads().and_then(|()| match &cli.command {
        Command::Run { scenario } => commands::cmd_run(scenario),
        Command::Verify { solution, scenario } => commands::cmd_verify(solution, scenario),
        Command::Sweep { template, grid } => commands::cmd_sweep(template, grid),
    });
    match result {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("{}", e.to_line());
            ExitCode::from(e.code as u8)
        }
    }
}
