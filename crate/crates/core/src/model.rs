//! Domain types shared by every other module: tasks, core sets, wire
//! messages, execution-log events and the runtime configuration.
//!
//! Nothing in here performs I/O.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Error produced when a core list cannot be parsed.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid core list token `{token}`: {reason}")]
pub struct CoreListError {
    pub token: String,
    pub reason: &'static str,
}

/// An ordered, duplicate-free set of CPU indices.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct CoreSet(BTreeSet<usize>);

impl CoreSet {
    pub fn new<I: IntoIterator<Item = usize>>(cores: I) -> Self {
        CoreSet(cores.into_iter().collect())
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.0.iter().copied()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, core: usize) -> bool {
        self.0.contains(&core)
    }

    /// Cores present in both sets.
    pub fn intersection(&self, other: &CoreSet) -> CoreSet {
        CoreSet(self.0.intersection(&other.0).copied().collect())
    }
}

impl FromIterator<usize> for CoreSet {
    fn from_iter<T: IntoIterator<Item = usize>>(iter: T) -> Self {
        CoreSet::new(iter)
    }
}

impl fmt::Display for CoreSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut first = true;
        let mut iter = self.0.iter().copied().peekable();
        while let Some(start) = iter.next() {
            let mut end = start;
            while iter.peek() == Some(&(end + 1)) {
                end = iter.next().unwrap();
            }
            if !first {
                f.write_str(",")?;
            }
            first = false;
            if end > start {
                write!(f, "{start}-{end}")?;
            } else {
                write!(f, "{start}")?;
            }
        }
        Ok(())
    }
}

/// Parses a core list such as `0-7` or `0-2,6`. Empty (or blank) text
/// means no pinning and yields `None`.
pub fn parse_core_list(text: &str) -> Result<Option<CoreSet>, CoreListError> {
    let text = text.trim();
    if text.is_empty() {
        return Ok(None);
    }
    let mut cores = BTreeSet::new();
    for token in text.split(',') {
        let token = token.trim();
        let err = |reason| CoreListError {
            token: token.to_string(),
            reason,
        };
        if token.is_empty() {
            return Err(err("empty element"));
        }
        match token.split_once('-') {
            Some((lo, hi)) => {
                let lo: usize = lo.trim().parse().map_err(|_| err("not a number"))?;
                let hi: usize = hi.trim().parse().map_err(|_| err("not a number"))?;
                if lo > hi {
                    return Err(err("range start exceeds range end"));
                }
                cores.extend(lo..=hi);
            }
            None => {
                cores.insert(token.parse().map_err(|_| err("not a number"))?);
            }
        }
    }
    Ok(Some(CoreSet(cores)))
}

/// Canonical text of an optional core set; `None` renders as "".
pub fn format_core_list(cores: Option<&CoreSet>) -> String {
    cores.map(CoreSet::to_string).unwrap_or_default()
}

impl FromStr for CoreSet {
    type Err = CoreListError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(parse_core_list(s)?.unwrap_or_default())
    }
}

/// One scheduled execution of an external program.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Task {
    /// Full shell command line.
    pub args: String,
    /// Start time in seconds, relative to the session start.
    pub timestamp: u64,
    /// Maximum (or exact) run time in seconds; 0 means unconstrained.
    pub duration: u64,
    pub is_fault: bool,
    pub seq_num: u64,
    pub cores: Option<CoreSet>,
}

impl Task {
    /// The subset of task fields that execution logs carry.
    pub fn echo(&self) -> TaskEcho {
        TaskEcho {
            args: self.args.clone(),
            seq_num: self.seq_num,
            duration: self.duration,
            is_fault: self.is_fault,
            cores: self.cores.clone(),
        }
    }

    /// Dispatch order: timestamp first, seq_num breaks ties.
    pub fn dispatch_key(&self) -> (u64, u64) {
        (self.timestamp, self.seq_num)
    }
}

/// Task fields echoed in execution-log entries (no relative timestamp).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaskEcho {
    pub args: String,
    pub seq_num: u64,
    pub duration: u64,
    pub is_fault: bool,
    pub cores: Option<CoreSet>,
}

/// A rule violated by one task of a workload.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Finding {
    pub index: usize,
    pub rule: Rule,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Rule {
    DuplicateSeqNum,
    EmptyArgs,
    ZeroSeqNum,
    /// `;` is the field delimiter of both CSV formats.
    DelimiterInArgs,
    /// Line breaks would split a CSV record.
    NewlineInArgs,
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Rule::DuplicateSeqNum => "duplicate seq_num",
            Rule::EmptyArgs => "empty args",
            Rule::ZeroSeqNum => "seq_num must be positive",
            Rule::DelimiterInArgs => "args contain ';'",
            Rule::NewlineInArgs => "args contain a line break",
        })
    }
}

impl fmt::Display for Finding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "task #{}: {}", self.index, self.rule)
    }
}

/// Checks every task invariant. An empty result means the workload is valid.
pub fn validate_workload(tasks: &[Task]) -> Vec<Finding> {
    let mut findings = Vec::new();
    let mut seen = HashMap::new();
    for (index, task) in tasks.iter().enumerate() {
        let mut push = |rule| findings.push(Finding { index, rule });
        if task.args.trim().is_empty() {
            push(Rule::EmptyArgs);
        }
        if task.args.contains(';') {
            push(Rule::DelimiterInArgs);
        }
        if task.args.contains(['\n', '\r']) {
            push(Rule::NewlineInArgs);
        }
        if task.seq_num == 0 {
            push(Rule::ZeroSeqNum);
        }
        if seen.insert(task.seq_num, index).is_some() {
            push(Rule::DuplicateSeqNum);
        }
    }
    findings
}

/// Every message kind understood on the wire.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MessageKind {
    CommandStartTask,
    CommandTerminateTask,
    CommandSessionStart,
    CommandSessionEnd,
    StatusTaskStart,
    StatusTaskEnd,
    StatusTaskRestart,
    StatusError,
    StatusConnection,
    Ack,
}

impl MessageKind {
    pub const ALL: [MessageKind; 10] = [
        MessageKind::CommandStartTask,
        MessageKind::CommandTerminateTask,
        MessageKind::CommandSessionStart,
        MessageKind::CommandSessionEnd,
        MessageKind::StatusTaskStart,
        MessageKind::StatusTaskEnd,
        MessageKind::StatusTaskRestart,
        MessageKind::StatusError,
        MessageKind::StatusConnection,
        MessageKind::Ack,
    ];

    pub fn is_status(self) -> bool {
        matches!(
            self,
            MessageKind::StatusTaskStart
                | MessageKind::StatusTaskEnd
                | MessageKind::StatusTaskRestart
                | MessageKind::StatusError
                | MessageKind::StatusConnection
        )
    }

    pub fn is_command(self) -> bool {
        matches!(
            self,
            MessageKind::CommandStartTask
                | MessageKind::CommandTerminateTask
                | MessageKind::CommandSessionStart
                | MessageKind::CommandSessionEnd
        )
    }

    /// Whether this kind must carry a complete task echo.
    pub fn carries_task(self) -> bool {
        matches!(
            self,
            MessageKind::CommandStartTask
                | MessageKind::StatusTaskStart
                | MessageKind::StatusTaskEnd
                | MessageKind::StatusTaskRestart
        )
    }
}

/// Scalar fields a message may carry. Absent fields are omitted on the wire.
///
/// Field declaration order is alphabetical by wire key so that serialized
/// payloads come out with sorted keys.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Payload {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub abs_time: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub args: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cores: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub duration: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(rename = "isFault", skip_serializing_if = "Option::is_none")]
    pub is_fault: Option<bool>,
    #[serde(rename = "seqNum", skip_serializing_if = "Option::is_none")]
    pub seq_num: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stderr: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stdout: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub timestamp: Option<u64>,
}

impl Payload {
    pub fn from_task(task: &Task) -> Self {
        Payload {
            args: Some(task.args.clone()),
            timestamp: Some(task.timestamp),
            duration: Some(task.duration),
            seq_num: Some(task.seq_num),
            is_fault: Some(task.is_fault),
            cores: task.cores.as_ref().map(CoreSet::to_string),
            ..Payload::default()
        }
    }

    /// Reassembles the task echoed in this payload, if it is complete.
    pub fn task(&self) -> Option<Task> {
        let cores = match &self.cores {
            Some(text) => parse_core_list(text).ok()?,
            None => None,
        };
        Some(Task {
            args: self.args.clone()?,
            timestamp: self.timestamp?,
            duration: self.duration?,
            is_fault: self.is_fault?,
            seq_num: self.seq_num?,
            cores,
        })
    }

    /// Names of the required keys missing for `kind`.
    pub fn missing_keys(&self, kind: MessageKind) -> Vec<&'static str> {
        let mut missing = Vec::new();
        if kind.carries_task() {
            if self.args.is_none() {
                missing.push("args");
            }
            if self.timestamp.is_none() {
                missing.push("timestamp");
            }
            if self.duration.is_none() {
                missing.push("duration");
            }
            if self.seq_num.is_none() {
                missing.push("seqNum");
            }
            if self.is_fault.is_none() {
                missing.push("isFault");
            }
        }
        match kind {
            MessageKind::CommandTerminateTask if self.seq_num.is_none() => missing.push("seqNum"),
            MessageKind::CommandSessionStart if self.timestamp.is_none() => {
                missing.push("timestamp")
            }
            MessageKind::StatusError | MessageKind::StatusConnection if self.error.is_none() => {
                missing.push("error")
            }
            _ => {}
        }
        if kind.is_status() && self.abs_time.is_none() {
            missing.push("abs_time");
        }
        if let Some(text) = &self.cores {
            if parse_core_list(text).is_err() {
                missing.push("cores");
            }
        }
        missing
    }
}

/// The unit exchanged between controllers and engines.
///
/// Field order matches sorted wire keys: "kind", "payload", "sender".
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Message {
    pub kind: MessageKind,
    #[serde(default)]
    pub payload: Payload,
    pub sender: String,
}

impl Message {
    pub fn new(kind: MessageKind, sender: impl Into<String>, payload: Payload) -> Self {
        Message {
            kind,
            payload,
            sender: sender.into(),
        }
    }
}

/// Execution-log event types, spelled as they appear in log files.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EventType {
    SessionStart,
    SessionEnd,
    Start,
    End,
    Restart,
    ConnLost,
    ConnRestored,
    Error,
}

impl EventType {
    pub const ALL: [EventType; 8] = [
        EventType::SessionStart,
        EventType::SessionEnd,
        EventType::Start,
        EventType::End,
        EventType::Restart,
        EventType::ConnLost,
        EventType::ConnRestored,
        EventType::Error,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            EventType::SessionStart => "command_session_s",
            EventType::SessionEnd => "command_session_e",
            EventType::Start => "status_start",
            EventType::End => "status_end",
            EventType::Restart => "status_restart",
            EventType::ConnLost => "status_conn_lost",
            EventType::ConnRestored => "status_conn_restored",
            EventType::Error => "status_err",
        }
    }
}

impl fmt::Display for EventType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EventType {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        EventType::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| format!("unknown event type `{s}`"))
    }
}

/// One line of a per-host execution log.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SessionEvent {
    /// Absolute epoch seconds on the clock that observed the event.
    pub timestamp: u64,
    pub kind: EventType,
    pub task: Option<TaskEcho>,
    pub error: Option<String>,
}

impl SessionEvent {
    pub fn new(timestamp: u64, kind: EventType) -> Self {
        SessionEvent {
            timestamp,
            kind,
            task: None,
            error: None,
        }
    }

    pub fn with_task(mut self, task: TaskEcho) -> Self {
        self.task = Some(task);
        self
    }

    pub fn with_error(mut self, error: impl Into<String>) -> Self {
        self.error = Some(error.into());
        self
    }

    pub fn seq_num(&self) -> Option<u64> {
        self.task.as_ref().map(|t| t.seq_num)
    }
}

/// Checks the log shape invariants: bracketed by session start/end entries,
/// and every end preceded by a start of the same task.
pub fn check_log_well_formed(events: &[SessionEvent]) -> Result<(), String> {
    match (events.first(), events.last()) {
        (Some(first), Some(last))
            if first.kind == EventType::SessionStart && last.kind == EventType::SessionEnd => {}
        _ => return Err("log is not bracketed by session start/end entries".into()),
    }
    let mut started = BTreeSet::new();
    for (i, event) in events.iter().enumerate() {
        match (event.kind, event.seq_num()) {
            (EventType::Start, Some(seq)) => {
                started.insert(seq);
            }
            (EventType::End, Some(seq)) if !started.contains(&seq) => {
                return Err(format!("entry {i}: end of task {seq} without a start"));
            }
            (EventType::SessionStart, _) if i != 0 => {
                return Err(format!("entry {i}: repeated session start"));
            }
            (EventType::SessionEnd, _) if i != events.len() - 1 => {
                return Err(format!("entry {i}: session end before the last entry"));
            }
            _ => {}
        }
    }
    Ok(())
}

/// Runtime options shared by engines and controllers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HarnessConfig {
    pub listen_port: u16,
    pub host_addresses: Vec<String>,
    pub pool_size: usize,
    pub exact_durations: bool,
    pub read_ahead_seconds: u64,
    pub retry_interval_seconds: u64,
    pub aux_commands: Vec<String>,
    pub results_dir: PathBuf,
    /// How long a controller waits for its first target to come up.
    pub startup_timeout_seconds: u64,
    /// Slack added to the last task deadline before a session is closed.
    pub drain_timeout_seconds: u64,
    /// Engine diagnostic log; `None` logs only through the `log` facade.
    pub engine_log: Option<PathBuf>,
}

impl Default for HarnessConfig {
    fn default() -> Self {
        HarnessConfig {
            listen_port: 30000,
            host_addresses: Vec::new(),
            pool_size: 16,
            exact_durations: false,
            read_ahead_seconds: 300,
            retry_interval_seconds: 10,
            aux_commands: Vec::new(),
            results_dir: PathBuf::from("results"),
            startup_timeout_seconds: 60,
            drain_timeout_seconds: 60,
            engine_log: None,
        }
    }
}

impl HarnessConfig {
    /// Returns the name of the first field violating a lower bound.
    pub fn check(&self) -> Result<(), &'static str> {
        if self.pool_size < 1 {
            return Err("pool_size");
        }
        if self.read_ahead_seconds < 1 {
            return Err("read_ahead_seconds");
        }
        if self.retry_interval_seconds < 1 {
            return Err("retry_interval_seconds");
        }
        Ok(())
    }
}
