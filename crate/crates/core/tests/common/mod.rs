#![allow(dead_code)]

pub mod arb;

use std::time::{Duration, Instant};

use finj::engine::{self, EngineHandle};
use finj::netproto::{Client, ClientEvent, ClientOptions};
use finj::{HarnessConfig, Message, MessageKind, Payload, PeerId, Task};

pub fn engine_config(pool_size: usize) -> HarnessConfig {
    HarnessConfig {
        listen_port: 0,
        pool_size,
        retry_interval_seconds: 1,
        ..HarnessConfig::default()
    }
}

pub fn start_engine(pool_size: usize) -> EngineHandle {
    engine::start(&engine_config(pool_size)).expect("engine starts")
}

pub fn connect(port: u16) -> Client {
    let client = Client::connect(
        PeerId::new("127.0.0.1", port),
        ClientOptions::new(Duration::from_millis(200)),
    );
    wait_for(&client, Duration::from_secs(5), |e| matches!(e, ClientEvent::Connected))
        .expect("client connects");
    client
}

/// Receives events until one satisfies `pred`.
pub fn wait_for(
    client: &Client,
    timeout: Duration,
    mut pred: impl FnMut(&ClientEvent) -> bool,
) -> Option<ClientEvent> {
    let deadline = Instant::now() + timeout;
    while let Some(left) = deadline.checked_duration_since(Instant::now()) {
        match client.events().recv_timeout(left) {
            Ok(ev) if pred(&ev) => return Some(ev),
            Ok(_) => {}
            Err(_) => return None,
        }
    }
    None
}

pub fn wait_message(client: &Client, timeout: Duration, kind: MessageKind) -> Option<Message> {
    match wait_for(client, timeout, |e| matches!(e, ClientEvent::Message(m) if m.kind == kind)) {
        Some(ClientEvent::Message(m)) => Some(m),
        _ => None,
    }
}

/// All messages arriving within `window`.
pub fn collect_messages(client: &Client, window: Duration) -> Vec<Message> {
    let deadline = Instant::now() + window;
    let mut out = Vec::new();
    while let Some(left) = deadline.checked_duration_since(Instant::now()) {
        match client.events().recv_timeout(left) {
            Ok(ClientEvent::Message(m)) => out.push(m),
            Ok(_) => {}
            Err(_) => break,
        }
    }
    out
}

pub fn session_start(sender: &str) -> Message {
    let payload = Payload {
        timestamp: Some(0),
        ..Payload::default()
    };
    Message::new(MessageKind::CommandSessionStart, sender, payload)
}

pub fn task(seq: u64, timestamp: u64, duration: u64, args: &str) -> Task {
    Task {
        args: args.into(),
        timestamp,
        duration,
        is_fault: false,
        seq_num: seq,
        cores: None,
    }
}

/// Pids of live processes whose command line contains `marker`.
pub fn processes_matching(marker: &str) -> Vec<u32> {
    let me = std::process::id();
    let mut pids = Vec::new();
    let Ok(entries) = std::fs::read_dir("/proc") else {
        return pids;
    };
    for entry in entries.flatten() {
        let Ok(pid) = entry.file_name().to_string_lossy().parse::<u32>() else {
            continue;
        };
        if pid == me {
            continue;
        }
        if let Ok(stat) = std::fs::read_to_string(format!("/proc/{pid}/stat")) {
            // Zombies are already dead; only their parent has not reaped them.
            if stat.rsplit(')').next().is_some_and(|s| s.trim_start().starts_with('Z')) {
                continue;
            }
        }
        if let Ok(cmd) = std::fs::read(format!("/proc/{pid}/cmdline")) {
            let cmd = String::from_utf8_lossy(&cmd).replace('\0', " ");
            if cmd.contains(marker) {
                pids.push(pid);
            }
        }
    }
    pids
}

pub struct EngineProcess {
    pub child: std::process::Child,
    pub port: u16,
}

impl EngineProcess {
    /// Starts `finj-engine` with `args` and waits for its listening line.
    pub fn spawn(args: &[&str], env: &[(&str, &str)]) -> EngineProcess {
        use std::io::{BufRead, BufReader};
        use std::process::{Command, Stdio};
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_finj-engine"));
        cmd.args(args)
            .stdout(Stdio::piped())
            .stderr(Stdio::null())
            .env("RUST_LOG", "warn");
        for (k, v) in env {
            cmd.env(k, v);
        }
        let mut child = cmd.spawn().expect("spawn finj-engine");
        let stdout = child.stdout.take().unwrap();
        let mut line = String::new();
        BufReader::new(stdout).read_line(&mut line).unwrap();
        let port = line
            .split_whitespace()
            .find_map(|f| f.strip_prefix("port="))
            .and_then(|p| p.parse().ok())
            .unwrap_or_else(|| panic!("unexpected engine banner `{line}`"));
        EngineProcess { child, port }
    }

    pub fn signal(&self, sig: i32) {
        // SAFETY: signalling our own child.
        unsafe { libc::kill(self.child.id() as i32, sig) };
    }

    /// SIGTERM, then wait for exit.
    pub fn stop(mut self) -> std::process::ExitStatus {
        self.signal(libc::SIGTERM);
        self.child.wait().unwrap()
    }
}

impl Drop for EngineProcess {
    fn drop(&mut self) {
        if let Ok(None) = self.child.try_wait() {
            let _ = self.child.kill();
            let _ = self.child.wait();
        }
    }
}
