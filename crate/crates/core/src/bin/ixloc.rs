use std::process::ExitCode;

use clap::Parser;
use ixloc::cli::{run, Cli, RunSpec};

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let spec = RunSpec::from_cli(Cli::parse());
    match run(&spec) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("ixloc: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
