use std::process::ExitCode;

use clap::Parser;
use finj::faultlib::{run_memleak, DEFAULT_LEAK_RATE_MIB};

/// Leaks memory at a constant rate, touching every page.
#[derive(Parser)]
#[command(name = "memleak", version)]
struct Args {
    /// Seconds to run; 0 runs until killed.
    duration: u64,
    /// Leak rate in MiB per second.
    #[arg(default_value_t = DEFAULT_LEAK_RATE_MIB)]
    rate: f64,
}

fn main() -> ExitCode {
    let args = Args::parse();
    match run_memleak(args.duration, args.rate) {
        Ok(bytes) => {
            println!("allocated_mib={}", bytes >> 20);
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("memleak: {e}");
            ExitCode::FAILURE
        }
    }
}
