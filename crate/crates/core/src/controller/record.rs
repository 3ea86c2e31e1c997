use std::path::{Path, PathBuf};

use crate::model::{EventType, Message, MessageKind, SessionEvent, TaskEcho};
use crate::netproto::PeerId;
use crate::storage::{write_task_output, Channel, LogWriter, StorageError};

/// File name used for a host in the results directory: `<host>_<port>`.
pub fn host_stem(peer: &PeerId) -> String {
    let host: String = peer
        .host
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || matches!(c, '.' | '-' | '_') {
                c
            } else {
                '_'
            }
        })
        .collect();
    format!("{host}_{}", peer.port)
}

pub fn host_log_path(results: &Path, peer: &PeerId) -> PathBuf {
    results.join(format!("{}.csv", host_stem(peer)))
}

pub fn host_output_dir(results: &Path, peer: &PeerId) -> PathBuf {
    results.join(host_stem(peer))
}

/// Converts a status message into a log entry. Returns `None` for
/// messages that are not statuses.
pub fn status_event(msg: &Message) -> Option<SessionEvent> {
    let kind = match msg.kind {
        MessageKind::StatusTaskStart => EventType::Start,
        MessageKind::StatusTaskEnd => EventType::End,
        MessageKind::StatusTaskRestart => EventType::Restart,
        MessageKind::StatusError => EventType::Error,
        MessageKind::StatusConnection => {
            if msg.payload.error.as_deref().is_some_and(|e| e.contains("restored")) {
                EventType::ConnRestored
            } else {
                EventType::ConnLost
            }
        }
        _ => return None,
    };
    let timestamp = msg.payload.abs_time.unwrap_or_else(crate::epoch_seconds);
    let mut event = SessionEvent::new(timestamp, kind);
    event.task = msg.payload.task().map(|t| t.echo());
    event.error = msg.payload.error.clone();
    if event.task.is_none() {
        if let (Some(seq), Some(error)) = (msg.payload.seq_num, event.error.as_mut()) {
            error.push_str(&format!(" (seqNum {seq})"));
        }
    }
    Some(event)
}

/// The execution log of one host plus its task output directory.
pub struct HostLog {
    writer: LogWriter,
    output_dir: PathBuf,
}

impl HostLog {
    pub fn create(results: &Path, peer: &PeerId) -> Result<Self, StorageError> {
        Ok(HostLog {
            writer: LogWriter::create(&host_log_path(results, peer))?,
            output_dir: host_output_dir(results, peer),
        })
    }

    pub fn path(&self) -> &Path {
        self.writer.path()
    }

    pub fn output_dir(&self) -> &Path {
        &self.output_dir
    }

    pub fn append(&mut self, event: &SessionEvent) -> Result<(), StorageError> {
        self.writer.append(event)
    }

    /// Logs a status message and saves any task output it carries.
    /// `fallback` supplies the task echo when the message names the task
    /// only by sequence number.
    pub fn record_status(
        &mut self,
        msg: &Message,
        fallback: Option<TaskEcho>,
    ) -> Result<Option<SessionEvent>, StorageError> {
        let Some(mut event) = status_event(msg) else {
            return Ok(None);
        };
        if event.task.is_none() {
            if let Some(echo) = fallback {
                event.task = Some(echo);
                event.error = msg.payload.error.clone();
            }
        }
        if let Some(echo) = &event.task {
            for (channel, text) in [
                (Channel::Stdout, &msg.payload.stdout),
                (Channel::Stderr, &msg.payload.stderr),
            ] {
                if let Some(text) = text {
                    write_task_output(&self.output_dir, echo, channel, text)?;
                }
            }
        }
        self.append(&event)?;
        Ok(Some(event))
    }
}
