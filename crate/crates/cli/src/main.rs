//! `sns`: simulate multi-population Gaussian data, estimate graphs, and
//! evaluate the estimators by ROC and per-iteration timing.

mod commands;
mod error;
mod io;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::commands::{BenchArgs, FitArgs, ReplayArgs, RocArgs, SimulateArgs};
use crate::error::CliError;

#[derive(Parser)]
#[command(name = "sns", version, about = "Joint neighborhood selection for multiple Gaussian graphical models")]
struct Cli {
    /// Worker threads for the numerical kernels.
    #[arg(long, global = true, env = "SNS_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a synthetic scenario: data, true edges and precision matrices.
    Simulate(SimulateArgs),
    /// Estimate edge sets from one CSV file per subpopulation.
    Fit(FitArgs),
    /// ROC curves and areas over a λ grid.
    Roc(RocArgs),
    /// Per-iteration solver timings and log-log slopes.
    Bench(BenchArgs),
    /// Repeat a recorded run and check its outputs.
    Replay(ReplayArgs),
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(t) = cli.threads {
        if t == 0 {
            return Err(CliError::Usage("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| CliError::Usage(e.to_string()))?;
    }
    match cli.command {
        Command::Simulate(a) => commands::cmd_simulate(&a).map(drop),
        Command::Fit(a) => commands::cmd_fit(&a).map(drop),
        Command::Roc(a) => commands::cmd_roc(&a).map(drop),
        Command::Bench(a) => commands::cmd_bench(&a).map(drop),
        Command::Replay(a) => commands::cmd_replay(&a).map(drop),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {e}", e.category());
            ExitCode::FAILURE
        }
    }
}
