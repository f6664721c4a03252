mod args;
mod commands;
mod failure;
mod manifest;

use std::process::ExitCode;

use clap::Parser;

use args::{Cli, Command};

/// Caps the worker pool; results do not depend on it.
const THREADS_ENV: &str = "MAHNN_THREADS";

fn init_threads() -> Result<(), failure::Failure> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = raw.trim().parse().ok().filter(|&n| n > 0).ok_or_else(|| {
        failure::Failure::Config(vec![format!("{THREADS_ENV} must be a positive integer, got `{raw}`")])
    })?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| failure::Failure::Internal(e.to_string()))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let result = init_threads().and_then(|()| match &cli.command {
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::Cv(a) => commands::cv(a),
        Command::Gradcheck(a) => commands::gradcheck(a),
        Command::Attn(a) => commands::attn(a),
        Command::Convert(a) => commands::convert(a),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprint!("{f}");
            if !matches!(f, failure::Failure::Config(_)) {
                eprintln!();
            }
            f.exit_code()
        }
    }
}
