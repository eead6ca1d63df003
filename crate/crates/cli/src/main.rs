use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use sfocc_cli::commands::{rerun, run_command, Command, RunOptions};

#[derive(Parser)]
#[command(name = "sfocc", version, about = "Multi-species occupancy models")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Overrides the seed in the config.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Simulate a dataset from a scenario or custom settings.
    Simulate(Common),
    /// Fit a model and write the posterior store and summary.
    Fit(Common),
    /// Predict occupancy and richness at new sites.
    Predict(Common),
    /// Compare fits by WAIC and holdout deviance.
    Compare(Common),
    /// Run a simulation study.
    Simstudy(Common),
    /// Re-execute a recorded run and check its outputs match.
    Rerun {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (cmd, c) = match cli.command {
        Cmd::Simulate(c) => (Command::Simulate, c),
        Cmd::Fit(c) => (Command::Fit, c),
        Cmd::Predict(c) => (Command::Predict, c),
        Cmd::Compare(c) => (Command::Compare, c),
        Cmd::Simstudy(c) => (Command::Simstudy, c),
        Cmd::Rerun { manifest, out } => {
            return match rerun(&manifest, &out) {
                Ok(_) => ExitCode::SUCCESS,
                Err(e) => {
                    eprintln!("error: {e:#}");
                    ExitCode::FAILURE
                }
            }
        }
    };
    let opts = RunOptions {
        config: c.config,
        out: c.out,
        seed: c.seed,
        workers: c.workers,
    };
    match run_command(cmd, &opts) {
        Ok(_) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
