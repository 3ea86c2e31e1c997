//! Workload injection against a set of engines.
//!
//! The controller streams a workload file, sends each task to every target
//! engine ahead of its start time, and records the statuses coming back in
//! one execution log per host. Connection losses are logged; when a host
//! comes back, the session is resumed and every task it has not finished
//! is sent again. Engines treat repeated commands as no-ops, so resending
//! is always safe.

mod dispatch;
mod record;

use std::collections::{BTreeMap, HashSet};
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use log::{info, warn};
use thiserror::Error;

pub use dispatch::{Dispatch, DispatchQueue};
pub use record::{host_log_path, host_output_dir, host_stem, status_event, HostLog};

use crate::engine::{local_hostname, start_task_message};
use crate::model::{EventType, HarnessConfig, Message, MessageKind, Payload, SessionEvent, Task};
use crate::netproto::{Client, ClientEvent, ClientOptions, Greeting, PeerId};
use crate::storage::{read_workload, LogWriter, StorageError};

/// Log of status messages that match no dispatched task.
pub const QUARANTINE_LOG: &str = "quarantine.csv";

const TICK: Duration = Duration::from_millis(50);
const FLUSH_TIMEOUT: Duration = Duration::from_secs(2);

#[derive(Debug, Error)]
pub enum ControllerError {
    #[error(transparent)]
    Storage(#[from] StorageError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("no target engines given")]
    NoTargets,
    #[error("no target engine reachable within {0} s")]
    Unreachable(u64),
}

/// Identity used as the `sender` of controller messages.
pub fn controller_identity() -> String {
    format!("{}:{}", local_hostname(), std::process::id())
}

/// What to inject and where.
#[derive(Debug, Clone)]
pub struct SessionPlan {
    pub workload: PathBuf,
    pub targets: Vec<PeerId>,
    /// Overrides [`controller_identity`].
    pub identity: Option<String>,
    /// When set, the session is wound down as if the workload had ended.
    pub stop: Option<Arc<AtomicBool>>,
}

impl SessionPlan {
    pub fn new(workload: impl Into<PathBuf>, targets: Vec<PeerId>) -> Self {
        SessionPlan {
            workload: workload.into(),
            targets,
            identity: None,
            stop: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HostSummary {
    pub peer: PeerId,
    pub log_path: PathBuf,
    pub started: u64,
    pub ended: u64,
    pub restarts: u64,
    /// `status_err` entries written to this host's log.
    pub errors: u64,
    pub connection_losses: u64,
    /// Tasks without a final status when the session closed.
    pub incomplete: u64,
}

impl HostSummary {
    pub fn complete(&self) -> bool {
        self.incomplete == 0 && self.errors == 0
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SessionSummary {
    pub hosts: Vec<HostSummary>,
    pub dispatched: u64,
    pub bad_lines: u64,
    pub peak_buffered: usize,
    pub quarantined: u64,
    pub elapsed_seconds: u64,
}

impl SessionSummary {
    pub fn clean(&self) -> bool {
        self.hosts.iter().all(HostSummary::complete)
    }

    pub fn exit_code(&self) -> i32 {
        if self.clean() {
            0
        } else {
            1
        }
    }

    /// One-line `key=value` summary.
    pub fn line(&self) -> String {
        let sum = |f: fn(&HostSummary) -> u64| self.hosts.iter().map(f).sum::<u64>();
        format!(
            "hosts={} tasks={} started={} ended={} restarts={} errors={} incomplete={} conn_lost={} quarantined={} elapsed={}s",
            self.hosts.len(),
            self.dispatched,
            sum(|h| h.started),
            sum(|h| h.ended),
            sum(|h| h.restarts),
            sum(|h| h.errors),
            sum(|h| h.incomplete),
            sum(|h| h.connection_losses),
            self.quarantined,
            self.elapsed_seconds,
        )
    }
}

struct Host {
    client: Client,
    log: HostLog,
    connected: bool,
    /// Dispatched tasks without a final status.
    outstanding: BTreeMap<u64, Task>,
    dispatched: HashSet<u64>,
    started: HashSet<(u64, u64)>,
    finished: HashSet<u64>,
    summary: HostSummary,
}

impl Host {
    fn log(&mut self, event: &SessionEvent) -> Result<(), StorageError> {
        if event.kind == EventType::Error {
            self.summary.errors += 1;
        }
        self.log.append(event)
    }
}

struct Session {
    identity: String,
    origin: Instant,
    hosts: Vec<Host>,
    quarantine: Option<LogWriter>,
    quarantine_path: PathBuf,
    quarantined: u64,
}

impl Session {
    fn elapsed(&self) -> Duration {
        self.origin.elapsed()
    }

    fn send(&self, index: usize, msg: Message) {
        let host = &self.hosts[index];
        if let Err(e) = host.client.send(msg) {
            warn!("cannot queue message for {}: {e}", host.summary.peer);
        }
    }

    fn dispatch(&mut self, task: &Task) {
        let msg = start_task_message(&self.identity, task);
        for i in 0..self.hosts.len() {
            let host = &mut self.hosts[i];
            host.outstanding.insert(task.seq_num, task.clone());
            host.dispatched.insert(task.seq_num);
            if host.connected {
                self.send(i, msg.clone());
            }
        }
    }

    fn bad_line(&mut self, error: &StorageError) -> Result<(), StorageError> {
        let event = SessionEvent::new(crate::epoch_seconds(), EventType::Error)
            .with_error(format!("workload: {error}"));
        for host in &mut self.hosts {
            host.log(&event)?;
        }
        Ok(())
    }

    fn quarantine(&mut self, host: &PeerId, msg: &Message) -> Result<(), StorageError> {
        self.quarantined += 1;
        let mut event = status_event(msg)
            .unwrap_or_else(|| SessionEvent::new(crate::epoch_seconds(), EventType::Error));
        event.error = Some(format!(
            "from {} via {host}: {:?} {}",
            msg.sender,
            msg.kind,
            msg.payload.error.as_deref().unwrap_or("")
        ));
        if self.quarantine.is_none() {
            self.quarantine = Some(LogWriter::open_append(&self.quarantine_path)?);
        }
        self.quarantine.as_mut().expect("opened above").append(&event)
    }

    fn on_event(&mut self, index: usize, event: ClientEvent) -> Result<(), StorageError> {
        match event {
            ClientEvent::Connected => {
                if !self.hosts[index].connected {
                    self.hosts[index].connected = true;
                    let restored = SessionEvent::new(crate::epoch_seconds(), EventType::ConnRestored);
                    self.hosts[index].log(&restored)?;
                    info!("connection to {} restored", self.hosts[index].summary.peer);
                    self.resend_outstanding(index);
                }
            }
            ClientEvent::Disconnected(why) => {
                let host = &mut self.hosts[index];
                if host.connected {
                    host.connected = false;
                    host.summary.connection_losses += 1;
                    let reason = why.unwrap_or_else(|| "connection lost".into());
                    warn!("connection to {} lost: {reason}", host.summary.peer);
                    let lost = SessionEvent::new(crate::epoch_seconds(), EventType::ConnLost)
                        .with_error(reason);
                    host.log(&lost)?;
                }
            }
            ClientEvent::Message(msg) => self.on_message(index, msg)?,
        }
        Ok(())
    }

    /// Re-sends every unfinished task after a reconnect. The client greeting
    /// normally carries the session start already; it is repeated here in
    /// case the connection came up before the session opened.
    fn resend_outstanding(&mut self, index: usize) {
        self.send(index, session_start_message(&self.identity, self.elapsed()));
        let tasks: Vec<Task> = self.hosts[index].outstanding.values().cloned().collect();
        for task in &tasks {
            self.send(index, start_task_message(&self.identity, task));
        }
    }

    fn on_message(&mut self, index: usize, msg: Message) -> Result<(), StorageError> {
        if msg.kind == MessageKind::Ack {
            return Ok(());
        }
        let peer = self.hosts[index].summary.peer.clone();
        if !msg.kind.is_status() {
            return self.quarantine(&peer, &msg);
        }
        let seq = msg.payload.seq_num;
        let host = &mut self.hosts[index];
        if let Some(seq) = seq {
            if !host.dispatched.contains(&seq) {
                return self.quarantine(&peer, &msg);
            }
        }
        let abs = msg.payload.abs_time.unwrap_or(0);
        match (msg.kind, seq) {
            (MessageKind::StatusTaskStart, Some(seq)) => {
                if !host.started.insert((seq, abs)) || host.finished.contains(&seq) {
                    return Ok(());
                }
                host.summary.started += 1;
            }
            (MessageKind::StatusTaskEnd | MessageKind::StatusError, Some(seq)) => {
                if !host.finished.insert(seq) {
                    return Ok(());
                }
                if msg.kind == MessageKind::StatusTaskEnd {
                    host.summary.ended += 1;
                }
            }
            (MessageKind::StatusTaskRestart, Some(seq)) => {
                if host.finished.contains(&seq) {
                    return Ok(());
                }
                host.summary.restarts += 1;
            }
            _ => {}
        }
        let fallback = seq.and_then(|s| host.outstanding.get(&s)).map(Task::echo);
        if matches!(msg.kind, MessageKind::StatusTaskEnd | MessageKind::StatusError) {
            if let Some(seq) = seq {
                host.outstanding.remove(&seq);
            }
        }
        if let Some(event) = host.log.record_status(&msg, fallback)? {
            if event.kind == EventType::Error {
                host.summary.errors += 1;
            }
        }
        Ok(())
    }

    fn poll_hosts(&mut self) -> Result<(), StorageError> {
        for i in 0..self.hosts.len() {
            while let Ok(event) = self.hosts[i].client.events().try_recv() {
                self.on_event(i, event)?;
            }
        }
        Ok(())
    }

    fn nothing_outstanding(&self) -> bool {
        self.hosts.iter().all(|h| h.outstanding.is_empty())
    }

    /// Unbounded tasks on reachable hosts keep the session open.
    fn holds_open(&self) -> bool {
        self.hosts
            .iter()
            .any(|h| h.connected && h.outstanding.values().any(|t| t.duration == 0))
    }
}

/// Waits for the initial connections. Returns whether each host connected.
fn await_connections(
    clients: &[Client],
    timeout: Duration,
    stop: Option<&AtomicBool>,
) -> Vec<bool> {
    let mut connected = vec![false; clients.len()];
    let deadline = Instant::now() + timeout;
    loop {
        for (i, client) in clients.iter().enumerate() {
            while let Ok(event) = client.events().try_recv() {
                match event {
                    ClientEvent::Connected => connected[i] = true,
                    ClientEvent::Disconnected(_) => connected[i] = false,
                    ClientEvent::Message(_) => {}
                }
            }
        }
        let stopped = stop.is_some_and(|s| s.load(Ordering::Relaxed));
        if connected.iter().all(|&c| c) || Instant::now() >= deadline || stopped {
            return connected;
        }
        thread::sleep(TICK);
    }
}

fn session_start_message(identity: &str, elapsed: Duration) -> Message {
    let payload = Payload {
        timestamp: Some(elapsed.as_secs()),
        ..Payload::default()
    };
    Message::new(MessageKind::CommandSessionStart, identity, payload)
}

/// Runs one injection session to completion.
pub fn inject(plan: &SessionPlan, config: &HarnessConfig) -> Result<SessionSummary, ControllerError> {
    config
        .check()
        .map_err(|key| ControllerError::Config(format!("{key} must be at least 1")))?;
    if plan.targets.is_empty() {
        return Err(ControllerError::NoTargets);
    }
    // A bad header aborts here, before any engine is contacted.
    let reader = read_workload(&plan.workload)?;
    let identity = plan.identity.clone().unwrap_or_else(controller_identity);
    let stop = plan.stop.as_deref();

    let opened: Arc<Mutex<Option<Instant>>> = Arc::new(Mutex::new(None));
    let greeting: Greeting = {
        let opened = Arc::clone(&opened);
        let identity = identity.clone();
        Arc::new(move || match *opened.lock().unwrap() {
            Some(origin) => vec![session_start_message(&identity, origin.elapsed())],
            None => Vec::new(),
        })
    };
    let retry = Duration::from_secs(config.retry_interval_seconds);
    let clients: Vec<Client> = plan
        .targets
        .iter()
        .map(|peer| {
            Client::connect(
                peer.clone(),
                ClientOptions::new(retry).with_greeting(Arc::clone(&greeting)),
            )
        })
        .collect();
    let connected = await_connections(
        &clients,
        Duration::from_secs(config.startup_timeout_seconds),
        stop,
    );
    if !connected.iter().any(|&c| c) {
        return Err(ControllerError::Unreachable(config.startup_timeout_seconds));
    }

    let mut hosts = Vec::with_capacity(clients.len());
    for (client, connected) in clients.into_iter().zip(connected) {
        let peer = client.peer().clone();
        let log = HostLog::create(&config.results_dir, &peer)?;
        hosts.push(Host {
            summary: HostSummary {
                peer,
                log_path: log.path().to_path_buf(),
                started: 0,
                ended: 0,
                restarts: 0,
                errors: 0,
                connection_losses: 0,
                incomplete: 0,
            },
            client,
            log,
            connected,
            outstanding: BTreeMap::new(),
            dispatched: HashSet::new(),
            started: HashSet::new(),
            finished: HashSet::new(),
        });
    }

    let origin = Instant::now();
    *opened.lock().unwrap() = Some(origin);
    let mut session = Session {
        identity,
        origin,
        hosts,
        quarantine: None,
        quarantine_path: config.results_dir.join(QUARANTINE_LOG),
        quarantined: 0,
    };
    let opened_at = crate::epoch_seconds();
    for i in 0..session.hosts.len() {
        session.hosts[i].log(&SessionEvent::new(opened_at, EventType::SessionStart))?;
        if session.hosts[i].connected {
            session.send(i, session_start_message(&session.identity, Duration::ZERO));
        } else {
            let host = &mut session.hosts[i];
            host.summary.connection_losses += 1;
            warn!("{} unreachable at session start", host.summary.peer);
            host.log(
                &SessionEvent::new(opened_at, EventType::ConnLost)
                    .with_error("unreachable at session start"),
            )?;
        }
    }
    info!("session opened with {} host(s)", session.hosts.len());

    let mut queue = DispatchQueue::new(reader, Duration::from_secs(config.read_ahead_seconds));
    let drain = Duration::from_secs(config.drain_timeout_seconds);
    let mut bad_lines = 0;
    loop {
        session.poll_hosts()?;
        for item in queue.poll(session.elapsed()) {
            match item {
                Dispatch::Task(task) => session.dispatch(&task),
                Dispatch::BadLine(e) => {
                    warn!("skipping {e}");
                    bad_lines += 1;
                    session.bad_line(&e)?;
                }
            }
        }
        if stop.is_some_and(|s| s.load(Ordering::Relaxed)) {
            info!("stop requested; closing session");
            break;
        }
        if queue.finished() {
            if session.nothing_outstanding() {
                break;
            }
            let deadline = Duration::from_secs(queue.latest_end()) + drain;
            if session.elapsed() >= deadline && !session.holds_open() {
                warn!("drain timeout reached with tasks outstanding");
                break;
            }
        }
        thread::sleep(TICK);
    }

    let closing = crate::epoch_seconds();
    for i in 0..session.hosts.len() {
        if session.hosts[i].connected {
            let end = Message::new(MessageKind::CommandSessionEnd, session.identity.clone(), Payload::default());
            session.send(i, end);
        }
    }
    // Statuses already in flight still belong in the logs.
    session.poll_hosts()?;
    for host in &mut session.hosts {
        if host.connected && !host.client.flush(FLUSH_TIMEOUT) {
            warn!("could not deliver session end to {}", host.summary.peer);
        }
        let leftovers: Vec<Task> = std::mem::take(&mut host.outstanding).into_values().collect();
        host.summary.incomplete = leftovers.len() as u64;
        for task in leftovers {
            let event = SessionEvent::new(closing, EventType::Error)
                .with_task(task.echo())
                .with_error("no final status before session end");
            host.log(&event)?;
        }
        host.log(&SessionEvent::new(crate::epoch_seconds(), EventType::SessionEnd))?;
        host.client.close();
    }

    let summary = SessionSummary {
        hosts: session.hosts.iter().map(|h| h.summary.clone()).collect(),
        dispatched: queue.released(),
        bad_lines,
        peak_buffered: queue.peak_buffered(),
        quarantined: session.quarantined,
        elapsed_seconds: session.elapsed().as_secs(),
    };
    info!("session closed: {}", summary.line());
    Ok(summary)
}
