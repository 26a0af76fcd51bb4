//! `pdmp-ergo run <config>` and `pdmp-ergo validate <config>`.
//!
//! Exit codes: 0 on success, 2 when checks ran and some failed, 1 on
//! configuration or internal errors.

mod config;
mod runner;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "pdmp-ergo", version, about = "Simulation and ergodicity diagnostics for switched-semiflow PDMPs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a config file and write its artifacts.
    Run { config: PathBuf },
    /// Check a config file without running it.
    Validate { config: PathBuf },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match cli.command {
        Command::Run { config } => match runner::run(&config) {
            Ok(outcome) => outcome.exit_code(),
            Err(e) => {
                eprintln!("error: {e:#}");
                1
            }
        },
        Command::Validate { config } => match runner::validate(&config) {
            Ok(lines) => {
                for l in lines {
                    println!("{l}");
                }
                0
            }
            Err(e) => {
                eprintln!("error: {e:#}");
                1
            }
        },
    };
    ExitCode::from(code as u8)
}
