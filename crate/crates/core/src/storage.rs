//! Readers and writers for workload files, execution logs, per-task output
//! files and the JSON configuration.
//!
//! Both CSV formats are `;`-delimited with fixed headers:
//!
//! ```text
//! timestamp;duration;seqNum;isFault;cores;args
//! timestamp;type;args;seqNum;duration;isFault;cores;error
//! ```

use std::fs::{self, File, OpenOptions};
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use log::warn;
use serde::de::DeserializeOwned;
use serde_json::Value;
use thiserror::Error;

use crate::model::{
    format_core_list, parse_core_list, EventType, HarnessConfig, SessionEvent, Task, TaskEcho,
};
use crate::netproto::PeerId;

pub const WORKLOAD_HEADER: &str = "timestamp;duration;seqNum;isFault;cores;args";
pub const LOG_HEADER: &str = "timestamp;type;args;seqNum;duration;isFault;cores;error";
/// Absent-value marker in execution logs.
pub const NONE: &str = "None";

#[derive(Debug, Error)]
pub enum StorageError {
    #[error("{path}: {}", io_reason(.source))]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}: unexpected header `{found}`")]
    Header { path: PathBuf, found: String },
    #[error("line {line}: {message}")]
    Line { line: usize, message: String },
    #[error("config key `{key}`: {message}")]
    Config { key: String, message: String },
    #[error("{0}")]
    Invalid(String),
}

fn io_reason(e: &io::Error) -> String {
    match e.kind() {
        io::ErrorKind::NotFound => "file not found".into(),
        _ => e.to_string(),
    }
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> StorageError + '_ {
    move |source| StorageError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn format_bool(b: bool) -> &'static str {
    if b {
        "True"
    } else {
        "False"
    }
}

fn parse_bool(s: &str) -> Result<bool, String> {
    match s {
        "True" => Ok(true),
        "False" => Ok(false),
        other => Err(format!("expected True or False, found `{other}`")),
    }
}

fn parse_u64(field: &str, s: &str) -> Result<u64, String> {
    s.parse()
        .map_err(|_| format!("{field}: expected a non-negative integer, found `{s}`"))
}

/// Renders one workload line (without the newline).
pub fn format_workload_line(task: &Task) -> String {
    format!(
        "{};{};{};{};{};{}",
        task.timestamp,
        task.duration,
        task.seq_num,
        format_bool(task.is_fault),
        format_core_list(task.cores.as_ref()),
        task.args
    )
}

pub fn parse_workload_line(line: &str) -> Result<Task, String> {
    let fields: Vec<&str> = line.splitn(6, ';').collect();
    if fields.len() != 6 {
        return Err(format!("expected 6 fields, found {}", fields.len()));
    }
    // "None" is accepted too, matching the log files' absent marker.
    let cores = match fields[4].trim() {
        NONE => None,
        text => parse_core_list(text).map_err(|e| e.to_string())?,
    };
    let args = fields[5].trim();
    if args.is_empty() {
        return Err("empty args".into());
    }
    Ok(Task {
        timestamp: parse_u64("timestamp", fields[0].trim())?,
        duration: parse_u64("duration", fields[1].trim())?,
        seq_num: parse_u64("seqNum", fields[2].trim())?,
        is_fault: parse_bool(fields[3].trim())?,
        cores,
        args: args.to_string(),
    })
}

/// Lazily yields the tasks of a workload file, one line at a time.
pub struct WorkloadReader<R> {
    lines: io::Lines<R>,
    line_no: usize,
}

impl<R: BufRead> WorkloadReader<R> {
    /// Wraps `input`, consuming and checking the header line.
    pub fn new(input: R, origin: &Path) -> Result<Self, StorageError> {
        let mut lines = input.lines();
        let header = match lines.next() {
            Some(line) => line.map_err(io_err(origin))?,
            None => String::new(),
        };
        if header.trim_end() != WORKLOAD_HEADER {
            return Err(StorageError::Header {
                path: origin.to_path_buf(),
                found: header,
            });
        }
        Ok(WorkloadReader { lines, line_no: 1 })
    }
}

impl<R: BufRead> Iterator for WorkloadReader<R> {
    type Item = Result<Task, StorageError>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            let line = self.lines.next()?;
            self.line_no += 1;
            let line = match line {
                Ok(l) => l,
                Err(e) => {
                    return Some(Err(StorageError::Line {
                        line: self.line_no,
                        message: e.to_string(),
                    }))
                }
            };
            let line = line.trim_end();
            if line.is_empty() {
                continue;
            }
            return Some(parse_workload_line(line).map_err(|message| StorageError::Line {
                line: self.line_no,
                message,
            }));
        }
    }
}

pub fn read_workload(path: &Path) -> Result<WorkloadReader<BufReader<File>>, StorageError> {
    let file = File::open(path).map_err(io_err(path))?;
    WorkloadReader::new(BufReader::new(file), path)
}

/// Reads a whole workload, failing on the first bad line.
pub fn load_workload(path: &Path) -> Result<Vec<Task>, StorageError> {
    read_workload(path)?.collect()
}

pub fn write_workload<'a, I>(path: &Path, tasks: I) -> Result<(), StorageError>
where
    I: IntoIterator<Item = &'a Task>,
{
    let file = File::create(path).map_err(io_err(path))?;
    let mut out = BufWriter::new(file);
    writeln!(out, "{WORKLOAD_HEADER}").map_err(io_err(path))?;
    for task in tasks {
        if task.args.contains([';', '\n', '\r']) || task.args.trim().is_empty() {
            return Err(StorageError::Invalid(format!(
                "task {} has args that cannot be stored: `{}`",
                task.seq_num, task.args
            )));
        }
        writeln!(out, "{}", format_workload_line(task)).map_err(io_err(path))?;
    }
    out.flush().map_err(io_err(path))
}

fn sanitize_error(text: &str) -> String {
    text.replace(';', ",").replace(['\n', '\r'], " ")
}

/// Renders one execution-log line (without the newline).
pub fn format_log_line(event: &SessionEvent) -> String {
    let task_cols = match &event.task {
        Some(t) => format!(
            "{};{};{};{};{}",
            t.args,
            t.seq_num,
            t.duration,
            format_bool(t.is_fault),
            t.cores
                .as_ref()
                .map(|c| c.to_string())
                .unwrap_or_else(|| NONE.to_string())
        ),
        None => [NONE; 5].join(";"),
    };
    let error = event
        .error
        .as_deref()
        .map(sanitize_error)
        .unwrap_or_else(|| NONE.to_string());
    format!("{};{};{};{}", event.timestamp, event.kind, task_cols, error)
}

pub fn parse_log_line(line: &str) -> Result<SessionEvent, String> {
    let fields: Vec<&str> = line.split(';').collect();
    if fields.len() != 8 {
        return Err(format!("expected 8 fields, found {}", fields.len()));
    }
    let timestamp = parse_u64("timestamp", fields[0])?;
    let kind: EventType = fields[1].parse()?;
    let task = if fields[2] == NONE && fields[3] == NONE {
        None
    } else {
        let cores = match fields[6] {
            NONE => None,
            text => parse_core_list(text).map_err(|e| e.to_string())?,
        };
        Some(TaskEcho {
            args: fields[2].to_string(),
            seq_num: parse_u64("seqNum", fields[3])?,
            duration: parse_u64("duration", fields[4])?,
            is_fault: parse_bool(fields[5])?,
            cores,
        })
    };
    let error = match fields[7] {
        NONE => None,
        text => Some(text.to_string()),
    };
    Ok(SessionEvent {
        timestamp,
        kind,
        task,
        error,
    })
}

/// Append-only execution-log writer. Every entry is flushed to disk
/// before `append` returns.
pub struct LogWriter {
    path: PathBuf,
    file: File,
}

impl LogWriter {
    /// Creates (or truncates) `path` and writes the header.
    pub fn create(path: &Path) -> Result<Self, StorageError> {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent).map_err(io_err(parent))?;
        }
        let mut file = File::create(path).map_err(io_err(path))?;
        writeln!(file, "{LOG_HEADER}").map_err(io_err(path))?;
        file.sync_data().map_err(io_err(path))?;
        Ok(LogWriter {
            path: path.to_path_buf(),
            file,
        })
    }

    /// Opens `path` for appending, writing the header only if the file is
    /// new or empty.
    pub fn open_append(path: &Path) -> Result<Self, StorageError> {
        let mut file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(io_err(path))?;
        if file.metadata().map_err(io_err(path))?.len() == 0 {
            writeln!(file, "{LOG_HEADER}").map_err(io_err(path))?;
        }
        Ok(LogWriter {
            path: path.to_path_buf(),
            file,
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn append(&mut self, event: &SessionEvent) -> Result<(), StorageError> {
        let line = format!("{}\n", format_log_line(event));
        self.file
            .write_all(line.as_bytes())
            .and_then(|_| self.file.flush())
            .map_err(io_err(&self.path))
    }
}

pub fn write_log_entry(path: &Path, event: &SessionEvent) -> Result<(), StorageError> {
    LogWriter::open_append(path)?.append(event)
}

pub fn read_log(path: &Path) -> Result<Vec<SessionEvent>, StorageError> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut lines = BufReader::new(file).lines();
    let header = lines
        .next()
        .transpose()
        .map_err(io_err(path))?
        .unwrap_or_default();
    if header.trim_end() != LOG_HEADER {
        return Err(StorageError::Header {
            path: path.to_path_buf(),
            found: header,
        });
    }
    let mut events = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line.map_err(io_err(path))?;
        let line = line.strip_suffix('\r').unwrap_or(&line);
        if line.is_empty() {
            continue;
        }
        events.push(parse_log_line(line).map_err(|message| StorageError::Line {
            line: i + 2,
            message,
        })?);
    }
    Ok(events)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Channel {
    Stdout,
    Stderr,
}

impl Channel {
    pub fn marker(self) -> &'static str {
        match self {
            Channel::Stdout => "==> stdout <==",
            Channel::Stderr => "==> stderr <==",
        }
    }
}

/// File-name stem for a task's output: the program's base name.
pub fn task_output_stem(args: &str) -> String {
    let mut tokens = args.split_whitespace();
    let mut program = tokens.next().unwrap_or("");
    if program == "sudo" {
        program = tokens.next().unwrap_or(program);
    }
    let base = Path::new(program)
        .file_name()
        .and_then(|s| s.to_str())
        .unwrap_or("");
    let stem: String = base
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || matches!(c, '.' | '-' | '_') {
                c
            } else {
                '_'
            }
        })
        .collect();
    if stem.is_empty() {
        "task".to_string()
    } else {
        stem
    }
}

/// Appends `text` to `<dir>/<program>_<seq>.out` behind a channel marker
/// line. Empty text writes nothing and returns `None`.
pub fn write_task_output(
    dir: &Path,
    task: &TaskEcho,
    channel: Channel,
    text: &str,
) -> Result<Option<PathBuf>, StorageError> {
    if text.is_empty() {
        return Ok(None);
    }
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let path = dir.join(format!("{}_{}.out", task_output_stem(&task.args), task.seq_num));
    let mut file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(&path)
        .map_err(io_err(&path))?;
    let mut chunk = String::with_capacity(text.len() + 16);
    chunk.push_str(channel.marker());
    chunk.push('\n');
    chunk.push_str(text);
    if !text.ends_with('\n') {
        chunk.push('\n');
    }
    file.write_all(chunk.as_bytes()).map_err(io_err(&path))?;
    Ok(Some(path))
}

pub fn default_config() -> HarnessConfig {
    HarnessConfig::default()
}

fn take<T: DeserializeOwned>(value: &Value, key: &str) -> Result<T, StorageError> {
    serde_json::from_value(value.clone()).map_err(|e| StorageError::Config {
        key: key.to_string(),
        message: e.to_string(),
    })
}

/// Parses configuration JSON. Missing keys keep their defaults; unknown
/// keys are returned so callers can warn about them.
pub fn parse_config(text: &str) -> Result<(HarnessConfig, Vec<String>), StorageError> {
    let root: Value = serde_json::from_str(text).map_err(|e| StorageError::Config {
        key: "<document>".into(),
        message: e.to_string(),
    })?;
    let Value::Object(map) = root else {
        return Err(StorageError::Config {
            key: "<document>".into(),
            message: "expected a JSON object".into(),
        });
    };
    let mut cfg = HarnessConfig::default();
    let mut unknown = Vec::new();
    for (key, value) in &map {
        match key.as_str() {
            "listen_port" => cfg.listen_port = take(value, key)?,
            "host_addresses" => {
                let hosts: Vec<String> = take(value, key)?;
                for h in &hosts {
                    h.parse::<PeerId>().map_err(|message| StorageError::Config {
                        key: key.clone(),
                        message,
                    })?;
                }
                cfg.host_addresses = hosts;
            }
            "pool_size" => cfg.pool_size = take(value, key)?,
            "exact_durations" => cfg.exact_durations = take(value, key)?,
            "read_ahead_seconds" => cfg.read_ahead_seconds = take(value, key)?,
            "retry_interval_seconds" => cfg.retry_interval_seconds = take(value, key)?,
            "aux_commands" => cfg.aux_commands = take(value, key)?,
            "results_dir" => cfg.results_dir = take(value, key)?,
            "startup_timeout_seconds" => cfg.startup_timeout_seconds = take(value, key)?,
            "drain_timeout_seconds" => cfg.drain_timeout_seconds = take(value, key)?,
            "engine_log" => cfg.engine_log = take(value, key)?,
            _ => unknown.push(key.clone()),
        }
    }
    cfg.check().map_err(|key| StorageError::Config {
        key: key.to_string(),
        message: "must be at least 1".into(),
    })?;
    Ok((cfg, unknown))
}

pub fn read_config(path: &Path) -> Result<HarnessConfig, StorageError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let (cfg, unknown) = parse_config(&text)?;
    for key in unknown {
        warn!("{}: ignoring unknown config key `{key}`", path.display());
    }
    Ok(cfg)
}
