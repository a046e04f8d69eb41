//! `shiftrisk` command-line tool.

mod commands;
mod config;
mod error;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

use crate::commands::SweepKindArg;
use crate::error::{CliError, EXIT_CONFIG};
use crate::output::Format;

#[derive(Debug, Parser)]
#[command(name = "shiftrisk", version, about = "Runtime risk assessment under distribution shift")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// Configuration file; repeat to merge, later files win.
    #[arg(long = "config", short = 'c', global = true, value_name = "PATH")]
    pub configs: Vec<PathBuf>,
    /// Output file (or directory, for sweeps).
    #[arg(long, short = 'o', global = true, env = "SHIFTRISK_OUTPUT", value_name = "PATH")]
    pub output: Option<PathBuf>,
    /// Overrides every seed in the configuration.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for sweeps.
    #[arg(long, short = 'j', global = true, env = "SHIFTRISK_JOBS")]
    pub jobs: Option<usize>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a deployment and write its per-batch trace.
    Simulate,
    /// Assess a verdict stream read from a file or standard input.
    Monitor(MonitorArgs),
    /// Run an experiment sweep into an output directory.
    Sweep {
        #[arg(value_enum)]
        kind: SweepKindArg,
    },
    /// Estimate a detector profile and accuracy table from labelled data.
    Calibrate {
        /// CSV with is_ood, verdict and is_correct columns.
        #[arg(long, short = 'i')]
        input: PathBuf,
    },
    /// Print the monitor's event tree at a given event rate.
    Tree {
        #[arg(long)]
        rate: f64,
    },
    /// Print the merged configuration.
    Config,
}

#[derive(Debug, Args)]
pub struct MonitorArgs {
    /// Verdict file, one 0 or 1 per line; standard input when absent.
    #[arg(long, short = 'i')]
    pub input: Option<PathBuf>,
    /// Read raw detector scores and threshold them with [score_threshold].
    #[arg(long)]
    pub scores: bool,
    /// Write the monitor state here after the last verdict.
    #[arg(long)]
    pub snapshot: Option<PathBuf>,
    /// Continue from a saved snapshot instead of a fresh monitor.
    #[arg(long)]
    pub resume: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            let _ = err.print();
            return match err.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(EXIT_CONFIG),
            };
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("shiftrisk: {err}");
            err.exit_code()
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode, CliError> {
    if let Some(jobs) = cli.global.jobs {
        if jobs == 0 {
            return Err(CliError::Usage("--jobs must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| CliError::Usage(format!("--jobs: {e}")))?;
    }
    commands::dispatch(&cli.global, &cli.command)
}
