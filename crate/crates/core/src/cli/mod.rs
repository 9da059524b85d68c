//! Command-line front end: `hrf <command> --config <path> [--seed N] [--out DIR]`.
//!
//! Exit codes: 0 on success, 2 for configuration or argument errors, 3 for
//! numerical failures.

pub mod commands;
pub mod config;
pub mod output;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::error::{Error, Result};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "hrf", version, about = "Hierarchical rectified flow experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model and write a checkpoint and loss curve.
    Train(CommonArgs),
    /// Generate samples from a checkpoint.
    Sample(CommonArgs),
    /// Compare generated samples against fresh target samples.
    Eval(CommonArgs),
    /// Estimate data log-likelihood with a depth-2 model.
    Density(CommonArgs),
    /// Check the closed-form velocity density against Monte Carlo.
    VelocityCheck(CommonArgs),
    /// Train several models and compare sampler schedules at a fixed budget.
    Ablate(CommonArgs),
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides the seed from the config file.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory; defaults to the config's `out_dir`, then `out`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Train(_) => "train",
            Command::Sample(_) => "sample",
            Command::Eval(_) => "eval",
            Command::Density(_) => "density",
            Command::VelocityCheck(_) => "velocity-check",
            Command::Ablate(_) => "ablate",
        }
    }

    fn args(&self) -> &CommonArgs {
        match self {
            Command::Train(a)
            | Command::Sample(a)
            | Command::Eval(a)
            | Command::Density(a)
            | Command::VelocityCheck(a)
            | Command::Ablate(a) => a,
        }
    }
}

pub fn exit_code(err: &Error) -> i32 {
    if err.is_numerical() {
        EXIT_NUMERICAL
    } else {
        EXIT_CONFIG
    }
}

/// Parses `args` (including the program name) and runs the command.
/// Returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    match execute(&cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn execute(command: &Command) -> Result<()> {
    let ctx = commands::Context::new(command.name(), command.args())?;
    match command {
        Command::Train(_) => commands::train(&ctx),
        Command::Sample(_) => commands::sample(&ctx),
        Command::Eval(_) => commands::eval(&ctx),
        Command::Density(_) => commands::density(&ctx),
        Command::VelocityCheck(_) => commands::velocity_check(&ctx),
        Command::Ablate(_) => commands::ablate(&ctx),
    }
}
