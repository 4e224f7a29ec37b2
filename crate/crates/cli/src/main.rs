mod commands;
mod config;

use std::process::ExitCode;

use clap::Parser;

use config::{Cli, Command};

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Bounds(args) => commands::bounds(args),
        Command::Certify(args) => commands::certify(args),
        Command::Attack(args) => commands::attack(args),
        Command::Coverage(args) => commands::coverage(args),
    };
    match result {
        Ok(summary) if summary.errors == 0 => ExitCode::SUCCESS,
        Ok(summary) => {
            log::error!("{} image(s) failed", summary.errors);
            ExitCode::from(1)
        }
        Err(e) => {
            log::error!("{e}");
            ExitCode::from(1)
        }
    }
}
