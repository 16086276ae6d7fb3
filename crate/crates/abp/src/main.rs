use std::process::ExitCode;

use abp::cli::{execute, Cli};
use clap::Parser;

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("abp: {e}");
            e.exit_code()
        }
    }
}
