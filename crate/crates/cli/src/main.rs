//! `ltrf`: register-interval formation, bank-aware renumbering and register
//! file simulation from the command line.

mod args;
mod commands;
mod fail;

use std::process::ExitCode;

use clap::Parser;

use crate::args::{Cli, Command};

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("LTRF_LOG", "warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Parse(a) => commands::parse(&cli.common, a),
        Command::Intervals(a) => commands::intervals(&cli.common, a),
        Command::Renumber(a) => commands::renumber(&cli.common, a),
        Command::Simulate(a) => commands::simulate(&cli.common, a),
        Command::Report(a) => commands::report(&cli.common, a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
