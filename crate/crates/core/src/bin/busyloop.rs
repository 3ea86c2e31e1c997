use std::process::ExitCode;

use clap::Parser;
use finj::faultlib::run_busyloop;

/// Runs a fixed arithmetic workload sized to the given seconds on an idle core.
#[derive(Parser)]
#[command(name = "busyloop", version)]
struct Args {
    /// Target run time in seconds on an idle core.
    duration: u64,
    /// Run exactly this many iterations instead of calibrating.
    #[arg(long)]
    iterations: Option<u64>,
}

fn main() -> ExitCode {
    let args = Args::parse();
    match run_busyloop(args.duration, args.iterations) {
        Ok(report) => {
            println!("{}", report.line());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("busyloop: {e}");
            ExitCode::FAILURE
        }
    }
}
