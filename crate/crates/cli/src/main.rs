//! Command-line experiment runner: synthesize boundary data, reconstruct
//! the source, verify the solver machinery, and reproduce error tables.

mod commands;
mod config;
mod error;
mod problem;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::config::load_config;
use crate::error::CliResult;

#[derive(Parser)]
#[command(
    name = "invsource",
    version,
    about = "Reconstruct the space-dependent source factor of a parabolic problem from top-boundary measurements"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// Configuration file (TOML); defaults apply when omitted.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Override a configuration value, e.g. --set noise.delta_percent=3
    #[arg(long = "set", value_name = "SECTION.KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Write clean, noisy and smoothed measurement traces
    Synth(CommonArgs),
    /// Run the conjugate-gradient reconstruction and write its artifacts
    Reconstruct(CommonArgs),
    /// Run the solver verification suite and write a pass/fail report
    Verify(CommonArgs),
    /// Reconstruct over a level/noise sweep and tabulate relative errors
    Table(CommonArgs),
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Synth(args) => {
            let cfg = load_config(args.config.as_deref(), &args.set)?;
            commands::cmd_synth(&cfg)
        }
        Command::Reconstruct(args) => {
            let cfg = load_config(args.config.as_deref(), &args.set)?;
            commands::cmd_reconstruct(&cfg)
        }
        Command::Verify(args) => {
            let cfg = load_config(args.config.as_deref(), &args.set)?;
            commands::cmd_verify(&cfg)
        }
        Command::Table(args) => {
            let cfg = load_config(args.config.as_deref(), &args.set)?;
            commands::cmd_table(&cfg)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
