use std::process::ExitCode;

use clap::Parser;
use downscaler::{execute, thread_limit, Cli};

fn main() -> ExitCode {
    let cli = Cli::parse();
    let raw = std::env::var("DOWNSCALER_THREADS").ok();
    let limit = match thread_limit(raw.as_deref()) {
        Ok(l) => l,
        Err(e) => {
            eprintln!("error: {}", e.message);
            return ExitCode::from(e.code as u8);
        }
    };
    if let Some(n) = limit {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot start thread pool: {e}");
            return ExitCode::from(1);
        }
    }
    match execute(&cli.command) {
        Ok(text) => {
            print!("{text}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code as u8)
        }
    }
}
