use std::process::ExitCode;

use clap::Parser;

fn main() -> ExitCode {
    ExitCode::from(dhl_cli::run(&dhl_cli::Cli::parse()))
}
