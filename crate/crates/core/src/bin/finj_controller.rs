use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::atomic::AtomicBool;
use std::sync::Arc;

use clap::Parser;
use finj::cli::{init_logging, load_config, parse_targets};
use finj::controller::{inject, SessionPlan};
use finj::PeerId;

/// Replays a workload file against one or more engines.
#[derive(Parser)]
#[command(name = "finj-controller", version)]
struct Args {
    /// Workload CSV file.
    #[arg(short, long)]
    workload: PathBuf,
    /// Comma-separated engine addresses (host:port); defaults to the
    /// config's host_addresses.
    #[arg(short = 'a', long = "addresses", value_parser = parse_target_list)]
    addresses: Option<Targets>,
    /// Configuration file (default: $FINJ_CONFIG).
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Directory for execution logs and task output.
    #[arg(short, long)]
    output: Option<PathBuf>,
    /// Debug logging.
    #[arg(short, long)]
    verbose: bool,
}

#[derive(Clone)]
struct Targets(Vec<PeerId>);

fn parse_target_list(text: &str) -> Result<Targets, String> {
    parse_targets(text).map(Targets)
}

fn fail(e: impl std::fmt::Display) -> ExitCode {
    eprintln!("finj-controller: {e}");
    ExitCode::FAILURE
}

fn main() -> ExitCode {
    let args = Args::parse();
    init_logging(args.verbose);
    let mut config = match load_config(args.config.as_deref()) {
        Ok(c) => c,
        Err(e) => return fail(e),
    };
    if let Some(dir) = args.output {
        config.results_dir = dir;
    }
    let targets = match args.addresses {
        Some(Targets(t)) => t,
        None => match parse_targets(&config.host_addresses.join(",")) {
            Ok(t) => t,
            Err(e) => return fail(e),
        },
    };
    if targets.is_empty() {
        return fail("no engine addresses given (use -a or host_addresses in the config)");
    }
    let stop = Arc::new(AtomicBool::new(false));
    for sig in [signal_hook::consts::SIGINT, signal_hook::consts::SIGTERM] {
        if let Err(e) = signal_hook::flag::register(sig, Arc::clone(&stop)) {
            return fail(e);
        }
    }
    let mut plan = SessionPlan::new(args.workload, targets);
    plan.stop = Some(stop);
    match inject(&plan, &config) {
        Ok(summary) => {
            println!("{}", summary.line());
            for host in &summary.hosts {
                if !host.complete() {
                    eprintln!(
                        "finj-controller: {} incomplete: {} error(s), {} task(s) without a final status; see {}",
                        host.peer,
                        host.errors,
                        host.incomplete,
                        host.log_path.display()
                    );
                }
            }
            ExitCode::from(summary.exit_code() as u8)
        }
        Err(e) => fail(e),
    }
}
