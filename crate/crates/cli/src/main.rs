mod commands;
mod config;

use std::process::ExitCode;

use clap::Parser;

use config::{resolve, Cli, FileConfig};

fn usage_error(msg: &str) -> ExitCode {
    eprintln!("error: {msg}");
    ExitCode::from(2)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("SFC_LOG", "warn")).init();

    // Clap exits with status 2 on usage errors and 0 for --help.
    let cli = Cli::parse();
    let file = match &cli.common.config {
        Some(path) => match FileConfig::load(path) {
            Ok(f) => f,
            Err(msg) => return usage_error(&msg),
        },
        None => FileConfig::default(),
    };
    let cfg = match resolve(&cli.common, &cli.command, &file) {
        Ok(c) => c,
        Err(msg) => return usage_error(&msg),
    };
    if let Some(n) = cfg.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            log::warn!("could not size the thread pool: {e}");
        }
    }
    match commands::run(&cli.command, &cfg) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
