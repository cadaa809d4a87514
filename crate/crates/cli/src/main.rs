use std::process::ExitCode;

use clap::Parser;
use nvlink_cli::args::Cli;
use nvlink_cli::commands;

/// Caps the global rayon pool when `NVLINK_THREADS` is set.
fn configure_threads() -> Result<(), String> {
    let Ok(v) = std::env::var("NVLINK_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| format!("NVLINK_THREADS={v:?} is not a positive integer"))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| e.to_string())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(e) = configure_threads() {
        eprintln!("nvlink: config error: {e}");
        return ExitCode::from(2);
    }
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("nvlink: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
