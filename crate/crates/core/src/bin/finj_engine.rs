use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use finj::cli::{init_logging, load_config};
use finj::engine::engine_run;

/// Fault injection engine: runs tasks on this node on behalf of a controller.
#[derive(Parser)]
#[command(name = "finj-engine", version)]
struct Args {
    /// TCP port to listen on (overrides the config file).
    #[arg(short, long)]
    port: Option<u16>,
    /// Configuration file (default: $FINJ_CONFIG).
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Debug logging.
    #[arg(short, long)]
    verbose: bool,
}

fn main() -> ExitCode {
    let args = Args::parse();
    init_logging(args.verbose);
    let mut config = match load_config(args.config.as_deref()) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("finj-engine: {e}");
            return ExitCode::FAILURE;
        }
    };
    if let Some(port) = args.port {
        config.listen_port = port;
    }
    let pool = config.pool_size;
    let ready = |port| {
        println!("listening port={port} pool_size={pool}");
        let _ = std::io::stdout().flush();
    };
    match engine_run(&config, ready) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("finj-engine: {e}");
            ExitCode::FAILURE
        }
    }
}
