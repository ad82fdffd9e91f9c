use std::process::ExitCode;

use clap::Parser;
use dysnet::cli::{run, Cli};

fn main() -> ExitCode {
    ExitCode::from(run(Cli::parse()))
}
