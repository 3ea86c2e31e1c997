//! The per-node engine daemon.
//!
//! A single guardian thread owns all session state: it receives commands
//! from the network, schedules tasks, and hands them to a fixed pool of
//! executor threads once they are due. Executors broadcast task status to
//! every connected controller; only the session master may issue commands.

mod executor;
pub mod pinning;

use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashMap};
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::os::unix::process::CommandExt;
use std::process::{Child, Command, Stdio};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use crossbeam_channel::{bounded, select, unbounded, Receiver, Sender};
use log::{debug, info, warn};
use thiserror::Error;

pub use executor::{
    locate_program, run_task, ExecContext, Job, Outcome, RecordingSink, StatusSink, TaskControl,
    MIN_RESTART_WINDOW, TERMINATED, TERMINATION_GRACE,
};
use pinning::PinningSupport;

use crate::model::{HarnessConfig, Message, MessageKind, Payload, Task};
use crate::netproto::{PeerId, Server, ServerEvent};

/// Commands arriving this long after their start time run only for what is
/// left of their window.
const LATE_ARRIVAL: Duration = Duration::from_secs(1);
const IDLE_TICK: Duration = Duration::from_millis(200);

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("cannot listen on port {port}: {source}")]
    Bind {
        port: u16,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("cannot open engine log: {0}")]
    Log(std::io::Error),
    #[error("cannot install signal handlers: {0}")]
    Signals(std::io::Error),
}

/// Status errors returned to peers.
pub mod reasons {
    pub const NOT_MASTER: &str = "not master";
    pub const NO_SESSION: &str = "no open session";
    pub const NO_SUCH_TASK: &str = "no such task";
    pub const WINDOW_ELAPSED: &str = "task window already elapsed";
    pub const BAD_TASK: &str = "malformed task command";
}

/// Best-effort name of this host.
pub fn local_hostname() -> String {
    let mut buf = [0u8; 256];
    // SAFETY: gethostname writes at most buf.len() bytes.
    let rc = unsafe { libc::gethostname(buf.as_mut_ptr().cast(), buf.len()) };
    if rc == 0 {
        let end = buf.iter().position(|&b| b == 0).unwrap_or(buf.len());
        if let Ok(name) = std::str::from_utf8(&buf[..end]) {
            if !name.is_empty() {
                return name.to_string();
            }
        }
    }
    "localhost".to_string()
}

/// Plain-text diagnostic log, one line per event.
#[derive(Clone)]
struct DiagLog(Option<Arc<Mutex<File>>>);

impl DiagLog {
    fn open(config: &HarnessConfig) -> Result<Self, EngineError> {
        match &config.engine_log {
            None => Ok(DiagLog(None)),
            Some(path) => OpenOptions::new()
                .create(true)
                .append(true)
                .open(path)
                .map(|f| DiagLog(Some(Arc::new(Mutex::new(f)))))
                .map_err(EngineError::Log),
        }
    }

    fn line(&self, event: &str, detail: impl AsRef<str>) {
        debug!("{event}: {}", detail.as_ref());
        if let Some(file) = &self.0 {
            let mut f = file.lock().unwrap();
            let _ = writeln!(f, "{};{};{}", crate::epoch_seconds(), event, detail.as_ref());
        }
    }
}

struct ServerSink(Server);

impl StatusSink for ServerSink {
    fn broadcast(&self, msg: &Message) {
        if let Err(e) = self.0.broadcast(msg) {
            warn!("status broadcast failed: {e}");
        }
    }
}

enum WorkerEvent {
    Started { session: u64, seq: u64, msg: Message },
    Finished { session: u64, seq: u64, outcome: Outcome },
}

struct Session {
    id: u64,
    master: String,
    /// Instant corresponding to relative time 0 of the workload.
    origin: Instant,
}

struct Live {
    control: Arc<TaskControl>,
    start: Option<Message>,
}

struct Guardian {
    server: Server,
    sender: String,
    diag: DiagLog,
    session: Option<Session>,
    next_session: u64,
    pending: BinaryHeap<Reverse<(Instant, u64)>>,
    pending_jobs: HashMap<u64, Job>,
    live: HashMap<u64, Live>,
    /// End (or error) message of every finished task, replayed on duplicates.
    done: HashMap<u64, Option<Message>>,
    jobs: Sender<Job>,
}

impl Guardian {
    fn reply(&self, peer: &PeerId, kind: MessageKind, payload: Payload) {
        let msg = Message::new(kind, self.sender.clone(), payload);
        if let Err(e) = self.server.send_to(peer, &msg) {
            debug!("reply to {peer} failed: {e}");
        }
    }

    fn ack(&self, peer: &PeerId, seq: Option<u64>) {
        let payload = Payload {
            seq_num: seq,
            ..Payload::default()
        };
        self.reply(peer, MessageKind::Ack, payload);
    }

    fn error_to(&self, peer: &PeerId, text: &str, seq: Option<u64>) {
        let payload = Payload {
            error: Some(text.to_string()),
            seq_num: seq,
            abs_time: Some(crate::epoch_seconds()),
            ..Payload::default()
        };
        self.diag.line("reject", format!("{peer}: {text}"));
        self.reply(peer, MessageKind::StatusError, payload);
    }

    fn on_message(&mut self, peer: PeerId, msg: Message) {
        if !msg.kind.is_command() {
            debug!("ignoring {:?} from {peer}", msg.kind);
            return;
        }
        let seq = msg.payload.seq_num;
        if msg.kind == MessageKind::CommandSessionStart {
            self.on_session_start(&peer, &msg);
            return;
        }
        match &self.session {
            None => return self.error_to(&peer, reasons::NO_SESSION, seq),
            Some(s) if s.master != msg.sender => {
                return self.error_to(&peer, reasons::NOT_MASTER, seq)
            }
            Some(_) => {}
        }
        match msg.kind {
            MessageKind::CommandStartTask => self.on_start_task(&peer, &msg),
            MessageKind::CommandTerminateTask => self.on_terminate(&peer, seq.unwrap_or(0)),
            MessageKind::CommandSessionEnd => {
                self.close_session("ended by master");
                self.ack(&peer, None);
            }
            _ => unreachable!("filtered above"),
        }
    }

    fn on_session_start(&mut self, peer: &PeerId, msg: &Message) {
        let elapsed = Duration::from_secs(msg.payload.timestamp.unwrap_or(0));
        match &self.session {
            Some(s) if s.master == msg.sender => {
                self.diag.line("session_resume", &msg.sender);
            }
            Some(_) => return self.error_to(peer, reasons::NOT_MASTER, None),
            None => {
                let now = Instant::now();
                let origin = now.checked_sub(elapsed).unwrap_or(now);
                self.next_session += 1;
                self.session = Some(Session {
                    id: self.next_session,
                    master: msg.sender.clone(),
                    origin,
                });
                self.done.clear();
                info!("session opened by {}", msg.sender);
                self.diag.line("session_start", &msg.sender);
            }
        }
        self.ack(peer, None);
    }

    fn on_start_task(&mut self, peer: &PeerId, msg: &Message) {
        let Some(task) = msg.payload.task() else {
            return self.error_to(peer, reasons::BAD_TASK, msg.payload.seq_num);
        };
        let seq = task.seq_num;
        if self.pending_jobs.contains_key(&seq) {
            return self.ack(peer, Some(seq));
        }
        if let Some(live) = self.live.get(&seq) {
            let replay = live.start.clone();
            self.ack(peer, Some(seq));
            if let Some(m) = replay {
                let _ = self.server.send_to(peer, &m);
            }
            return;
        }
        if let Some(end) = self.done.get(&seq) {
            let replay = end.clone();
            self.ack(peer, Some(seq));
            if let Some(m) = replay {
                let _ = self.server.send_to(peer, &m);
            }
            return;
        }

        let session = self.session.as_ref().expect("checked by caller");
        let now = Instant::now();
        let start_at = session.origin + Duration::from_secs(task.timestamp);
        let late = now > start_at + LATE_ARRIVAL;
        let window_end = (late && task.duration > 0)
            .then(|| start_at + Duration::from_secs(task.duration));
        if window_end.is_some_and(|end| end <= now) {
            return self.error_to(peer, reasons::WINDOW_ELAPSED, Some(seq));
        }
        let job = Job {
            session: session.id,
            task,
            start_at,
            window_end,
            control: Arc::new(TaskControl::default()),
        };
        self.diag.line("schedule", format!("seq {seq} at +{}s", job.task.timestamp));
        self.pending.push(Reverse((start_at, seq)));
        self.pending_jobs.insert(seq, job);
        self.ack(peer, Some(seq));
        self.release_due();
    }

    fn on_terminate(&mut self, peer: &PeerId, seq: u64) {
        if self.pending_jobs.remove(&seq).is_some() {
            self.done.insert(seq, None);
            self.diag.line("cancel", format!("seq {seq}"));
            return self.ack(peer, Some(seq));
        }
        match self.live.get(&seq) {
            Some(live) => {
                live.control.request_termination();
                self.diag.line("terminate", format!("seq {seq}"));
                self.ack(peer, Some(seq));
            }
            None => self.error_to(peer, reasons::NO_SUCH_TASK, Some(seq)),
        }
    }

    fn close_session(&mut self, why: &str) {
        if self.session.take().is_none() {
            return;
        }
        self.pending.clear();
        self.pending_jobs.clear();
        for live in self.live.values() {
            live.control.request_termination();
        }
        self.live.clear();
        self.done.clear();
        info!("session closed ({why})");
        self.diag.line("session_end", why);
    }

    /// Hands every task whose start time has come to the executor pool.
    fn release_due(&mut self) {
        let now = Instant::now();
        while let Some(Reverse((at, seq))) = self.pending.peek().copied() {
            if at > now {
                break;
            }
            self.pending.pop();
            let Some(job) = self.pending_jobs.remove(&seq) else {
                continue;
            };
            self.live.insert(
                seq,
                Live {
                    control: Arc::clone(&job.control),
                    start: None,
                },
            );
            if self.jobs.send(job).is_err() {
                warn!("executor pool is gone; dropping task {seq}");
            }
        }
    }

    fn next_wakeup(&self) -> Duration {
        match self.pending.peek() {
            Some(Reverse((at, _))) => at.saturating_duration_since(Instant::now()).min(IDLE_TICK),
            None => IDLE_TICK,
        }
    }

    fn on_worker(&mut self, event: WorkerEvent) {
        let current = self.session.as_ref().map(|s| s.id);
        match event {
            WorkerEvent::Started { session, seq, msg } if Some(session) == current => {
                if let Some(live) = self.live.get_mut(&seq) {
                    live.start = Some(msg);
                }
                self.diag.line("task_start", format!("seq {seq}"));
            }
            WorkerEvent::Finished {
                session,
                seq,
                outcome,
            } if Some(session) == current => {
                self.live.remove(&seq);
                let last = outcome.end.or(outcome.error);
                self.diag.line(
                    "task_end",
                    format!("seq {seq} restarts {}", outcome.restarts),
                );
                self.done.insert(seq, last);
            }
            _ => {}
        }
    }
}

/// A running engine. Dropping the handle does not stop it; call
/// [`EngineHandle::shutdown`].
pub struct EngineHandle {
    port: u16,
    server: Server,
    stop: Sender<()>,
    guardian: Option<JoinHandle<()>>,
    workers: Vec<JoinHandle<()>>,
    aux: Vec<Child>,
}

impl EngineHandle {
    pub fn port(&self) -> u16 {
        self.port
    }

    /// Terminates running tasks and auxiliary commands, then closes all
    /// connections.
    pub fn shutdown(mut self) {
        let _ = self.stop.send(());
        if let Some(g) = self.guardian.take() {
            let _ = g.join();
        }
        for w in self.workers.drain(..) {
            let _ = w.join();
        }
        self.server.shutdown();
        for child in &mut self.aux {
            stop_aux(child);
        }
    }

    /// Blocks until the guardian exits (it only does on shutdown).
    pub fn wait(mut self) {
        if let Some(g) = self.guardian.take() {
            let _ = g.join();
        }
    }
}

fn spawn_aux(commands: &[String]) -> Vec<Child> {
    commands
        .iter()
        .filter_map(|cmd| {
            match Command::new("sh")
                .arg("-c")
                .arg(cmd)
                .stdin(Stdio::null())
                .process_group(0)
                .spawn()
            {
                Ok(child) => {
                    info!("started auxiliary command `{cmd}` (pid {})", child.id());
                    Some(child)
                }
                Err(e) => {
                    warn!("auxiliary command `{cmd}` failed to start: {e}");
                    None
                }
            }
        })
        .collect()
}

fn stop_aux(child: &mut Child) {
    let pgid = -(child.id() as libc::pid_t);
    // SAFETY: signalling our own child's process group.
    unsafe { libc::kill(pgid, libc::SIGTERM) };
    let deadline = Instant::now() + TERMINATION_GRACE;
    while Instant::now() < deadline {
        if let Ok(Some(_)) = child.try_wait() {
            break;
        }
        thread::sleep(Duration::from_millis(50));
    }
    // SAFETY: as above.
    unsafe { libc::kill(pgid, libc::SIGKILL) };
    let _ = child.wait();
}

/// Starts an engine in the background and returns its handle.
pub fn start(config: &HarnessConfig) -> Result<EngineHandle, EngineError> {
    config
        .check()
        .map_err(|key| EngineError::Config(format!("{key} must be at least 1")))?;
    let diag = DiagLog::open(config)?;
    let (server, net) = Server::bind(config.listen_port).map_err(|source| EngineError::Bind {
        port: config.listen_port,
        source,
    })?;
    let port = server.local_port();
    let sender = format!("{}:{port}", local_hostname());
    let aux = spawn_aux(&config.aux_commands);

    let (job_tx, job_rx) = unbounded::<Job>();
    let (worker_tx, worker_rx) = unbounded::<WorkerEvent>();
    let pinning = Arc::new(PinningSupport::detect());
    let workers = (0..config.pool_size)
        .map(|i| {
            let jobs = job_rx.clone();
            let events = worker_tx.clone();
            let sink = ServerSink(server.clone());
            let sender = sender.clone();
            let pinning = Arc::clone(&pinning);
            let exact = config.exact_durations;
            thread::Builder::new()
                .name(format!("finj-exec-{i}"))
                .spawn(move || {
                    let ctx = ExecContext {
                        sender: &sender,
                        exact_durations: exact,
                        pinning: &pinning,
                        grace: TERMINATION_GRACE,
                    };
                    executor_loop(jobs, events, &ctx, &sink)
                })
                .expect("spawn executor")
        })
        .collect();

    let (stop_tx, stop_rx) = bounded(1);
    let mut guardian = Guardian {
        server: server.clone(),
        sender,
        diag: diag.clone(),
        session: None,
        next_session: 0,
        pending: BinaryHeap::new(),
        pending_jobs: HashMap::new(),
        live: HashMap::new(),
        done: HashMap::new(),
        jobs: job_tx,
    };
    diag.line("listen", format!("port {port}"));
    info!("engine listening on port {port}");
    let guardian = thread::Builder::new()
        .name("finj-guardian".into())
        .spawn(move || {
            loop {
                let timeout = guardian.next_wakeup();
                select! {
                    recv(net) -> ev => match ev {
                        Ok(ServerEvent::Message(peer, msg)) => guardian.on_message(peer, msg),
                        Ok(ServerEvent::Connected(peer)) => guardian.diag.line("connect", peer.to_string()),
                        Ok(ServerEvent::Disconnected(peer, why)) => guardian.diag.line(
                            "disconnect",
                            format!("{peer} {}", why.unwrap_or_default()),
                        ),
                        Err(_) => break,
                    },
                    recv(worker_rx) -> ev => {
                        if let Ok(ev) = ev {
                            guardian.on_worker(ev);
                        }
                    },
                    recv(stop_rx) -> _ => break,
                    default(timeout) => {},
                }
                guardian.release_due();
            }
            guardian.close_session("engine shutdown");
            // Dropping the guardian closes the job queue and lets executors exit.
        })
        .expect("spawn guardian");

    Ok(EngineHandle {
        port,
        server,
        stop: stop_tx,
        guardian: Some(guardian),
        workers,
        aux,
    })
}

fn executor_loop(
    jobs: Receiver<Job>,
    events: Sender<WorkerEvent>,
    ctx: &ExecContext<'_>,
    sink: &dyn StatusSink,
) {
    for job in jobs {
        let seq = job.task.seq_num;
        let session = job.session;
        let notify = ForwardStart {
            inner: sink,
            events: &events,
            session,
            seq,
        };
        let outcome = run_task(&job, ctx, &notify);
        let _ = events.send(WorkerEvent::Finished {
            session,
            seq,
            outcome,
        });
    }
}

/// Passes statuses through and tells the guardian when a task started.
struct ForwardStart<'a> {
    inner: &'a dyn StatusSink,
    events: &'a Sender<WorkerEvent>,
    session: u64,
    seq: u64,
}

impl StatusSink for ForwardStart<'_> {
    fn broadcast(&self, msg: &Message) {
        self.inner.broadcast(msg);
        if msg.kind == MessageKind::StatusTaskStart {
            let _ = self.events.send(WorkerEvent::Started {
                session: self.session,
                seq: self.seq,
                msg: msg.clone(),
            });
        }
    }
}

/// Runs an engine until SIGINT or SIGTERM. `on_ready` receives the port
/// once the engine is listening.
pub fn engine_run(config: &HarnessConfig, on_ready: impl FnOnce(u16)) -> Result<(), EngineError> {
    use signal_hook::consts::{SIGINT, SIGTERM};
    use signal_hook::iterator::Signals;

    let mut signals = Signals::new([SIGINT, SIGTERM]).map_err(EngineError::Signals)?;
    let handle = start(config)?;
    on_ready(handle.port());
    if let Some(sig) = signals.forever().next() {
        info!("received signal {sig}; shutting down");
    }
    handle.shutdown();
    Ok(())
}

/// Builds the command message for `task`.
pub fn start_task_message(sender: &str, task: &Task) -> Message {
    Message::new(MessageKind::CommandStartTask, sender, Payload::from_task(task))
}
