use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use duallora_cli::config::OUTPUT_ROOT_ENV;
use duallora_cli::{exit_code, run, Cli};

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let root = std::env::var_os(OUTPUT_ROOT_ENV).map(PathBuf::from);
    match run(cli, root.as_deref()) {
        Ok(out) => {
            log::info!("outputs in {}", out.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
