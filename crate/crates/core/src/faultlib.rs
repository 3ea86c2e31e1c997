//! Portable fault and benchmark programs used as injection tasks.
//!
//! * memleak: allocates and touches memory at a constant rate, never freeing.
//! * cpuoccupy: keeps a number of threads spinning on arithmetic.
//! * busyloop: a fixed amount of arithmetic, sized to take a given number
//!   of seconds on an idle core.

use std::hint::black_box;
use std::thread;
use std::time::{Duration, Instant};

use thiserror::Error;

pub const DEFAULT_LEAK_RATE_MIB: f64 = 16.0;
const MIB: usize = 1 << 20;
const PAGE: usize = 4096;
const LEAK_STEP: Duration = Duration::from_millis(50);
/// Iterations between clock checks in the spinning loops.
const CHUNK: u64 = 1 << 16;
/// Longest calibration stretch; shorter runs calibrate over their whole length.
const CALIBRATION: Duration = Duration::from_secs(3);

#[derive(Debug, Error)]
pub enum FaultError {
    #[error("allocation failed after {allocated_mib} MiB")]
    Alloc { allocated_mib: u64 },
    #[error("{0}")]
    Usage(String),
}

/// Deadline for a run of `seconds`; zero means no deadline.
fn deadline(seconds: u64) -> Option<Instant> {
    (seconds > 0).then(|| Instant::now() + Duration::from_secs(seconds))
}

fn expired(deadline: Option<Instant>) -> bool {
    deadline.is_some_and(|d| Instant::now() >= d)
}

/// Leaks `rate_mib` MiB per second for `seconds` (0 = until killed).
/// Returns the number of bytes held at the end.
pub fn run_memleak(seconds: u64, rate_mib: f64) -> Result<usize, FaultError> {
    if !(rate_mib.is_finite() && rate_mib > 0.0) {
        return Err(FaultError::Usage(format!("invalid leak rate {rate_mib}")));
    }
    let end = deadline(seconds);
    let start = Instant::now();
    let mut held: Vec<Vec<u8>> = Vec::new();
    let mut total = 0usize;
    loop {
        let target = (start.elapsed().as_secs_f64() * rate_mib * MIB as f64) as usize;
        if target > total {
            let size = target - total;
            let mut block: Vec<u8> = Vec::new();
            block.try_reserve_exact(size).map_err(|_| FaultError::Alloc {
                allocated_mib: (total / MIB) as u64,
            })?;
            block.resize(size, 0);
            // Zero pages may stay shared; write to every page so it counts.
            for i in (0..size).step_by(PAGE) {
                block[i] = 1;
            }
            total += size;
            held.push(black_box(block));
        }
        if expired(end) {
            return Ok(total);
        }
        thread::sleep(LEAK_STEP);
    }
}

/// A serial multiply-add chain kept in registers. The opaque multiplier
/// stops the compiler from folding the loop; keeping `x` out of memory
/// makes the speed independent of code and stack alignment. Out of line so
/// calibration and the measured run execute the same machine code.
#[inline(never)]
fn spin(mut x: u64, iterations: u64) -> u64 {
    let a = black_box(6364136223846793005u64);
    for _ in 0..iterations {
        x = x.wrapping_mul(a).wrapping_add(1442695040888963407);
    }
    black_box(x)
}

/// Spins `workers` threads for `seconds` (0 = until killed).
pub fn run_cpuoccupy(seconds: u64, workers: usize) -> Result<(), FaultError> {
    if workers == 0 {
        return Err(FaultError::Usage("at least one worker is needed".into()));
    }
    let end = deadline(seconds);
    let handles: Vec<_> = (0..workers)
        .map(|i| {
            thread::spawn(move || {
                let mut x = i as u64;
                while !expired(end) {
                    x = spin(x, CHUNK);
                }
                black_box(x);
            })
        })
        .collect();
    for h in handles {
        let _ = h.join();
    }
    Ok(())
}

/// CPU time consumed by the calling thread.
pub fn thread_cpu_time() -> Duration {
    let mut ts = libc::timespec {
        tv_sec: 0,
        tv_nsec: 0,
    };
    // SAFETY: ts is a valid out-pointer.
    unsafe { libc::clock_gettime(libc::CLOCK_THREAD_CPUTIME_ID, &mut ts) };
    Duration::new(ts.tv_sec as u64, ts.tv_nsec as u32)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BusyloopReport {
    pub iterations: u64,
    pub elapsed: Duration,
}

impl BusyloopReport {
    pub fn line(&self) -> String {
        format!(
            "iterations={} elapsed_ms={}",
            self.iterations,
            self.elapsed.as_millis()
        )
    }

    /// Parses the line printed by [`BusyloopReport::line`].
    pub fn parse(text: &str) -> Option<BusyloopReport> {
        let line = text.lines().find(|l| l.starts_with("iterations="))?;
        let mut iterations = None;
        let mut elapsed = None;
        for field in line.split_whitespace() {
            match field.split_once('=')? {
                ("iterations", v) => iterations = v.parse().ok(),
                ("elapsed_ms", v) => elapsed = v.parse().ok().map(Duration::from_millis),
                _ => {}
            }
        }
        Some(BusyloopReport {
            iterations: iterations?,
            elapsed: elapsed?,
        })
    }
}

/// Performs the amount of arithmetic an idle core finishes in `seconds`, or
/// exactly `iterations` (rounded up to a whole chunk) when given.
///
/// Without a fixed count, the first stretch of the loop doubles as calibration: iterations per
/// second of thread CPU time (not wall time, so a shared core does not skew
/// it) fix the total. Both phases call the same out-of-line loop from the
/// same frame.
pub fn run_busyloop(seconds: u64, iterations: Option<u64>) -> Result<BusyloopReport, FaultError> {
    if seconds == 0 {
        return Err(FaultError::Usage("duration must be at least 1 s".into()));
    }
    let start = Instant::now();
    let cpu0 = thread_cpu_time();
    let window = CALIBRATION.min(Duration::from_secs(seconds));
    let mut total = iterations;
    let mut done = 0;
    let mut x = 0;
    loop {
        x = spin(x, CHUNK);
        done += CHUNK;
        match total {
            Some(total) if done >= total => break,
            Some(_) => {}
            None => {
                let cpu = thread_cpu_time() - cpu0;
                if cpu >= window {
                    let rate = done as f64 / cpu.as_secs_f64();
                    total = Some((rate * seconds as f64) as u64);
                }
            }
        }
    }
    black_box(x);
    Ok(BusyloopReport {
        iterations: done,
        elapsed: start.elapsed(),
    })
}

/// Resident set size of process `pid` in bytes, from /proc.
pub fn resident_bytes(pid: u32) -> Option<u64> {
    let statm = std::fs::read_to_string(format!("/proc/{pid}/statm")).ok()?;
    let pages: u64 = statm.split_whitespace().nth(1)?.parse().ok()?;
    // SAFETY: sysconf has no preconditions.
    let page = unsafe { libc::sysconf(libc::_SC_PAGESIZE) };
    Some(pages * page.max(1) as u64)
}
