use std::process::ExitCode;

use clap::Parser;
use finj::faultlib::run_cpuoccupy;

/// Keeps CPU cores busy with arithmetic.
#[derive(Parser)]
#[command(name = "cpuoccupy", version)]
struct Args {
    /// Seconds to run; 0 runs until killed.
    duration: u64,
    /// Number of spinning threads.
    #[arg(default_value_t = 1)]
    workers: usize,
}

fn main() -> ExitCode {
    let args = Args::parse();
    match run_cpuoccupy(args.duration, args.workers) {
        Ok(()) => {
            println!("workers={} duration_s={}", args.workers, args.duration);
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("cpuoccupy: {e}");
            ExitCode::FAILURE
        }
    }
}
