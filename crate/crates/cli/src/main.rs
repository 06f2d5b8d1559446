use std::process::ExitCode;

use clap::Parser;
use optgail::commands::{self, Cli};

fn main() -> ExitCode {
    match commands::run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("optgail: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
