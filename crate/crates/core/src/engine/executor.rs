//! Runs one task: spawn, enforce its duration, report status.

use std::io::Read;
use std::os::unix::process::{CommandExt, ExitStatusExt};
use std::path::Path;
use std::process::{Child, Command, ExitStatus, Stdio};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use crossbeam_channel::{bounded, Receiver};
use log::{info, warn};

use super::pinning::{apply_core_pinning, find_in_path, is_executable, PinningSupport};
use crate::model::{Message, MessageKind, Payload, Task};

/// Time between the polite and the forced kill.
pub const TERMINATION_GRACE: Duration = Duration::from_secs(5);
/// Below this much remaining time an exact-duration task is not restarted.
pub const MIN_RESTART_WINDOW: Duration = Duration::from_secs(1);
/// Error marker on end events of tasks that were killed.
pub const TERMINATED: &str = "terminated";
/// Captured output kept per channel and run.
const OUTPUT_CAP: usize = 256 * 1024;
const POLL: Duration = Duration::from_millis(20);

/// Shared switch used to ask a running task to stop.
#[derive(Debug, Default)]
pub struct TaskControl {
    terminate: AtomicBool,
}

impl TaskControl {
    pub fn request_termination(&self) {
        self.terminate.store(true, Ordering::SeqCst);
    }

    pub fn termination_requested(&self) -> bool {
        self.terminate.load(Ordering::SeqCst)
    }
}

/// Everything an executor needs to run one task.
pub struct Job {
    pub session: u64,
    pub task: Task,
    /// Instant the task is scheduled to start.
    pub start_at: Instant,
    /// Absolute end of the task's window when it must not outlive its
    /// schedule (commands that arrived after their start time).
    pub window_end: Option<Instant>,
    pub control: Arc<TaskControl>,
}

/// Where executors publish their status messages.
pub trait StatusSink: Send + Sync {
    fn broadcast(&self, msg: &Message);
}

pub struct ExecContext<'a> {
    pub sender: &'a str,
    pub exact_durations: bool,
    pub pinning: &'a PinningSupport,
    pub grace: Duration,
}

/// Outcome of a task as seen by the engine's bookkeeping.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub start: Option<Message>,
    pub end: Option<Message>,
    pub error: Option<Message>,
    pub restarts: u32,
}

fn status(ctx: &ExecContext<'_>, kind: MessageKind, task: &Task) -> Message {
    let mut payload = Payload::from_task(task);
    payload.abs_time = Some(crate::epoch_seconds());
    Message::new(kind, ctx.sender, payload)
}

const SHELL_WORDS: &[&str] = &[
    "cd", "exec", "exit", "export", "for", "if", "while", "until", "case", "true", "false", ":",
    "eval", "set", "unset", "wait", "sleep", "echo", "test", "[", "{", "(", ".", "source", "nice",
];

/// First program of a shell command line, when it can be located or is
/// resolved by the shell itself.
pub fn locate_program(args: &str) -> Result<(), String> {
    let Some(first) = args.split_whitespace().next() else {
        return Err("empty command".into());
    };
    if first.contains('=') || SHELL_WORDS.contains(&first) || first.starts_with(['$', '`', '\'', '"']) {
        return Ok(());
    }
    let found = if first.contains('/') {
        is_executable(Path::new(first))
    } else {
        find_in_path(first).is_some()
    };
    if found {
        Ok(())
    } else {
        Err(format!("executable not found: {first}"))
    }
}

struct Running {
    child: Child,
    stdout: Receiver<String>,
    stderr: Receiver<String>,
}

fn capture<R: Read + Send + 'static>(mut source: R) -> Receiver<String> {
    let (tx, rx) = bounded(1);
    thread::spawn(move || {
        let mut kept = Vec::new();
        let mut buf = [0u8; 8192];
        let mut truncated = false;
        loop {
            match source.read(&mut buf) {
                Ok(0) | Err(_) => break,
                Ok(n) => {
                    let room = OUTPUT_CAP.saturating_sub(kept.len());
                    kept.extend_from_slice(&buf[..n.min(room)]);
                    truncated |= n > room;
                }
            }
        }
        let mut text = String::from_utf8_lossy(&kept).into_owned();
        if truncated {
            text.push_str("\n[output truncated]\n");
        }
        let _ = tx.send(text);
    });
    rx
}

fn spawn(command: &str) -> std::io::Result<Running> {
    let mut child = Command::new("sh")
        .arg("-c")
        .arg(command)
        .stdin(Stdio::null())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .process_group(0)
        .spawn()?;
    let stdout = capture(child.stdout.take().expect("piped stdout"));
    let stderr = capture(child.stderr.take().expect("piped stderr"));
    Ok(Running {
        child,
        stdout,
        stderr,
    })
}

fn signal_group(child: &Child, signal: libc::c_int) {
    // SAFETY: plain syscall; a stale group id yields ESRCH, which is ignored.
    unsafe {
        libc::kill(-(child.id() as libc::pid_t), signal);
    }
}

/// SIGTERM to the whole process group, SIGKILL after `grace`.
fn kill_tree(running: &mut Running, grace: Duration) -> Option<ExitStatus> {
    signal_group(&running.child, libc::SIGTERM);
    let deadline = Instant::now() + grace;
    let mut status = None;
    while Instant::now() < deadline {
        if let Ok(Some(s)) = running.child.try_wait() {
            status = Some(s);
            break;
        }
        thread::sleep(POLL);
    }
    // Members of the group other than the leader may still be alive.
    signal_group(&running.child, libc::SIGKILL);
    status.or_else(|| running.child.wait().ok())
}

fn collect_output(running: &Running, payload: &mut Payload) {
    let wait = Duration::from_millis(500);
    let stdout = running.stdout.recv_timeout(wait).unwrap_or_default();
    let stderr = running.stderr.recv_timeout(wait).unwrap_or_default();
    payload.stdout = (!stdout.is_empty()).then_some(stdout);
    payload.stderr = (!stderr.is_empty()).then_some(stderr);
}

fn exit_note(status: Option<ExitStatus>) -> Option<String> {
    let status = status?;
    if status.success() {
        None
    } else if let Some(code) = status.code() {
        Some(format!("exit code {code}"))
    } else {
        status.signal().map(|s| format!("killed by signal {s}"))
    }
}

/// Executes `job` to completion, broadcasting start, restart and end
/// statuses through `sink`.
pub fn run_task(job: &Job, ctx: &ExecContext<'_>, sink: &dyn StatusSink) -> Outcome {
    let task = &job.task;
    let mut outcome = Outcome {
        start: None,
        end: None,
        error: None,
        restarts: 0,
    };

    let now = Instant::now();
    if job.start_at > now {
        // Sleep in slices so a termination request cancels the wait.
        while Instant::now() < job.start_at {
            if job.control.termination_requested() {
                return outcome;
            }
            thread::sleep((job.start_at - Instant::now()).min(Duration::from_millis(100)));
        }
    }
    if job.control.termination_requested() {
        return outcome;
    }

    let fail = |text: String| {
        let mut msg = status(ctx, MessageKind::StatusError, task);
        msg.payload.error = Some(text);
        sink.broadcast(&msg);
        msg
    };

    if let Err(text) = locate_program(&task.args) {
        outcome.error = Some(fail(text));
        return outcome;
    }
    let pinned = apply_core_pinning(&task.args, task.cores.as_ref(), ctx.pinning);
    if let Some(w) = &pinned.warning {
        warn!("task {}: {w}", task.seq_num);
    }
    let mut running = match spawn(&pinned.command) {
        Ok(r) => r,
        Err(e) => {
            outcome.error = Some(fail(format!("spawn failed: {e}")));
            return outcome;
        }
    };
    let started = Instant::now();
    let start_msg = status(ctx, MessageKind::StatusTaskStart, task);
    sink.broadcast(&start_msg);
    outcome.start = Some(start_msg);
    info!("task {} started: {}", task.seq_num, task.args);

    let deadline = (task.duration > 0).then(|| {
        let full = started + Duration::from_secs(task.duration);
        match job.window_end {
            Some(end) => full.min(end),
            None => full,
        }
    });

    let (exit, terminated) = loop {
        if let Ok(Some(exit)) = running.child.try_wait() {
            let remaining = deadline.map(|d| d.saturating_duration_since(Instant::now()));
            let restart = ctx.exact_durations
                && !job.control.termination_requested()
                && remaining.is_some_and(|r| r >= MIN_RESTART_WINDOW);
            if !restart {
                // Leftovers of the task in its process group.
                signal_group(&running.child, libc::SIGKILL);
                if ctx.exact_durations {
                    // Too little time for another run: hold the slot until
                    // the deadline so the task still spans its duration.
                    while deadline.is_some_and(|d| Instant::now() < d)
                        && !job.control.termination_requested()
                    {
                        thread::sleep(POLL);
                    }
                }
                break (Some(exit), false);
            }
            let mut msg = status(ctx, MessageKind::StatusTaskRestart, task);
            collect_output(&running, &mut msg.payload);
            msg.payload.error = exit_note(Some(exit));
            sink.broadcast(&msg);
            outcome.restarts += 1;
            running = match spawn(&pinned.command) {
                Ok(r) => r,
                Err(e) => {
                    let mut end = status(ctx, MessageKind::StatusTaskEnd, task);
                    end.payload.error = Some(format!("restart failed: {e}"));
                    sink.broadcast(&end);
                    outcome.end = Some(end);
                    return outcome;
                }
            };
            continue;
        }
        let overdue = deadline.is_some_and(|d| Instant::now() >= d);
        if overdue || job.control.termination_requested() {
            break (kill_tree(&mut running, ctx.grace), true);
        }
        thread::sleep(POLL);
    };

    let mut end = status(ctx, MessageKind::StatusTaskEnd, task);
    collect_output(&running, &mut end.payload);
    end.payload.error = if terminated {
        Some(TERMINATED.to_string())
    } else {
        exit_note(exit)
    };
    sink.broadcast(&end);
    info!(
        "task {} ended after {:.1}s ({})",
        task.seq_num,
        started.elapsed().as_secs_f64(),
        end.payload.error.as_deref().unwrap_or("ok")
    );
    outcome.end = Some(end);
    outcome
}

/// Collects broadcast messages; handy for driving executors directly.
#[derive(Default)]
pub struct RecordingSink(pub Mutex<Vec<Message>>);

impl StatusSink for RecordingSink {
    fn broadcast(&self, msg: &Message) {
        self.0.lock().unwrap().push(msg.clone());
    }
}
