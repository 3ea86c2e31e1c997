//! Message transport between controllers and engines.
//!
//! Every message travels as one frame: a 4-byte big-endian body length
//! followed by a UTF-8 JSON object. Bodies are produced with sorted keys,
//! so encoding is deterministic.

mod client;
mod server;

use std::fmt;
use std::io::{self, Read};
use std::str::FromStr;

use thiserror::Error;

use crate::model::Message;

pub use client::{Client, ClientEvent, ClientOptions, Greeting};
pub use server::{Server, ServerEvent};

/// Largest accepted frame body.
pub const MAX_FRAME_LEN: usize = 1 << 20;

#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error("frame of {0} bytes exceeds the {MAX_FRAME_LEN} byte limit")]
    FrameTooLarge(usize),
    #[error("malformed message body: {0}")]
    Malformed(String),
    #[error("message `{kind}` is missing required payload keys: {keys}")]
    MissingKeys { kind: String, keys: String },
    #[error("connection closed")]
    Closed,
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Network identity of a peer, written `host:port`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PeerId {
    pub host: String,
    pub port: u16,
}

impl PeerId {
    pub fn new(host: impl Into<String>, port: u16) -> Self {
        PeerId {
            host: host.into(),
            port,
        }
    }
}

impl fmt::Display for PeerId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.host, self.port)
    }
}

impl FromStr for PeerId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        let (host, port) = s
            .rsplit_once(':')
            .ok_or_else(|| format!("address `{s}` is not of the form host:port"))?;
        if host.is_empty() {
            return Err(format!("address `{s}` has an empty host"));
        }
        let port = port
            .parse()
            .map_err(|_| format!("address `{s}` has an invalid port"))?;
        Ok(PeerId::new(host, port))
    }
}

impl From<std::net::SocketAddr> for PeerId {
    fn from(addr: std::net::SocketAddr) -> Self {
        PeerId::new(addr.ip().to_string(), addr.port())
    }
}

fn check_message(msg: &Message) -> Result<(), ProtocolError> {
    let missing = msg.payload.missing_keys(msg.kind);
    if missing.is_empty() {
        Ok(())
    } else {
        Err(ProtocolError::MissingKeys {
            kind: serde_json::to_string(&msg.kind).unwrap_or_default(),
            keys: missing.join(","),
        })
    }
}

/// Encodes one message as a complete frame.
pub fn encode_message(msg: &Message) -> Result<Vec<u8>, ProtocolError> {
    check_message(msg)?;
    let body = serde_json::to_vec(msg).map_err(|e| ProtocolError::Malformed(e.to_string()))?;
    if body.len() > MAX_FRAME_LEN {
        return Err(ProtocolError::FrameTooLarge(body.len()));
    }
    let mut frame = Vec::with_capacity(4 + body.len());
    frame.extend_from_slice(&(body.len() as u32).to_be_bytes());
    frame.extend_from_slice(&body);
    Ok(frame)
}

/// Decodes a single frame body.
pub fn decode_body(body: &[u8]) -> Result<Message, ProtocolError> {
    let msg: Message =
        serde_json::from_slice(body).map_err(|e| ProtocolError::Malformed(e.to_string()))?;
    check_message(&msg)?;
    Ok(msg)
}

/// Extracts every complete message from `buffer`, returning them together
/// with the unconsumed tail.
pub fn decode_stream(buffer: &[u8]) -> Result<(Vec<Message>, &[u8]), ProtocolError> {
    decode_stream_with_limit(buffer, MAX_FRAME_LEN)
}

pub fn decode_stream_with_limit(
    mut buffer: &[u8],
    max_len: usize,
) -> Result<(Vec<Message>, &[u8]), ProtocolError> {
    let mut messages = Vec::new();
    while buffer.len() >= 4 {
        let len = u32::from_be_bytes([buffer[0], buffer[1], buffer[2], buffer[3]]) as usize;
        if len > max_len {
            return Err(ProtocolError::FrameTooLarge(len));
        }
        if buffer.len() < 4 + len {
            break;
        }
        messages.push(decode_body(&buffer[4..4 + len])?);
        buffer = &buffer[4 + len..];
    }
    Ok((messages, buffer))
}

/// Incremental decoder holding bytes of a partially received frame.
#[derive(Debug, Default)]
pub struct FrameDecoder {
    pending: Vec<u8>,
}

impl FrameDecoder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, bytes: &[u8]) -> Result<Vec<Message>, ProtocolError> {
        self.pending.extend_from_slice(bytes);
        let (messages, tail) = decode_stream(&self.pending)?;
        let consumed = self.pending.len() - tail.len();
        self.pending.drain(..consumed);
        Ok(messages)
    }

    pub fn buffered(&self) -> usize {
        self.pending.len()
    }
}

/// Blocking read of exactly one message. `Ok(None)` on a clean EOF
/// between frames.
pub(crate) fn read_message<R: Read>(input: &mut R) -> Result<Option<Message>, ProtocolError> {
    let mut len_buf = [0u8; 4];
    let mut filled = 0;
    while filled < 4 {
        match input.read(&mut len_buf[filled..]) {
            Ok(0) if filled == 0 => return Ok(None),
            Ok(0) => return Err(ProtocolError::Closed),
            Ok(n) => filled += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    let len = u32::from_be_bytes(len_buf) as usize;
    if len > MAX_FRAME_LEN {
        return Err(ProtocolError::FrameTooLarge(len));
    }
    let mut body = vec![0u8; len];
    input.read_exact(&mut body).map_err(|e| {
        if e.kind() == io::ErrorKind::UnexpectedEof {
            ProtocolError::Closed
        } else {
            e.into()
        }
    })?;
    decode_body(&body).map(Some)
}
