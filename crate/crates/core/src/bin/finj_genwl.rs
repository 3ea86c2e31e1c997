use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use finj::cli::init_logging;
use finj::wlgen::{generate_workload, load_spec, write_generated};

/// Generates a workload and its probe from a JSON recipe.
#[derive(Parser)]
#[command(name = "finj-genwl", version)]
struct Args {
    /// Generation spec (JSON).
    #[arg(short, long)]
    spec: PathBuf,
    /// Output directory.
    #[arg(short, long, default_value = ".")]
    output: PathBuf,
    /// Overrides the spec's seed.
    #[arg(long)]
    seed: Option<u64>,
}

fn main() -> ExitCode {
    let args = Args::parse();
    init_logging(false);
    let run = || -> Result<String, finj::wlgen::WlgenError> {
        let mut spec = load_spec(&args.spec)?;
        if let Some(seed) = args.seed {
            spec.seed = seed;
        }
        let (tasks, probe) = generate_workload(&spec)?;
        let (workload, probe_path) = write_generated(&spec, &args.output)?;
        let faults = tasks.iter().filter(|t| t.is_fault).count();
        Ok(format!(
            "workload={} probe={} tasks={} benchmark={} fault={} probe_tasks={} seed={}",
            workload.display(),
            probe_path.display(),
            tasks.len(),
            tasks.len() - faults,
            faults,
            probe.len(),
            spec.seed
        ))
    };
    match run() {
        Ok(line) => {
            println!("{line}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("finj-genwl: {e}");
            ExitCode::FAILURE
        }
    }
}
