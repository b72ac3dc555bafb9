use std::process::ExitCode;

use clap::Parser;

fn main() -> ExitCode {
    // EXGN_THREADS caps the worker pool for data generation and evaluation.
    if let Ok(v) = std::env::var("EXGN_THREADS") {
        if let Ok(n) = v.parse::<usize>() {
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
        }
    }
    let cli = crossview::cli::Cli::parse();
    match crossview::cli::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
