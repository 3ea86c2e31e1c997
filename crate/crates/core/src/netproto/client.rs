use std::collections::VecDeque;
use std::io::{self, Write};
use std::net::{Shutdown, TcpStream, ToSocketAddrs};
use std::sync::{Arc, Condvar, Mutex};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use crossbeam_channel::{unbounded, Receiver, Sender};
use log::debug;

use super::{encode_message, read_message, PeerId, ProtocolError};
use crate::model::Message;

const CONNECT_TIMEOUT: Duration = Duration::from_secs(2);
const WRITE_TIMEOUT: Duration = Duration::from_secs(5);

#[derive(Debug, Clone, PartialEq)]
pub enum ClientEvent {
    Connected,
    Disconnected(Option<String>),
    Message(Message),
}

/// Produces messages written first on every (re)connection, ahead of any
/// queued traffic.
pub type Greeting = Arc<dyn Fn() -> Vec<Message> + Send + Sync>;

#[derive(Clone)]
pub struct ClientOptions {
    pub retry_interval: Duration,
    pub greeting: Option<Greeting>,
}

impl ClientOptions {
    pub fn new(retry_interval: Duration) -> Self {
        ClientOptions {
            retry_interval,
            greeting: None,
        }
    }

    pub fn with_greeting(mut self, greeting: Greeting) -> Self {
        self.greeting = Some(greeting);
        self
    }
}

#[derive(Default)]
struct State {
    queue: VecDeque<Message>,
    in_flight: bool,
    connected: bool,
    broken: bool,
    closed: bool,
    stream: Option<TcpStream>,
}

struct Shared {
    state: Mutex<State>,
    cond: Condvar,
}

/// Reconnecting message client. Messages sent while disconnected are queued
/// and flushed in order once a connection is (re)established.
pub struct Client {
    peer: PeerId,
    shared: Arc<Shared>,
    events: Receiver<ClientEvent>,
    worker: Option<JoinHandle<()>>,
}

impl Client {
    pub fn connect(peer: PeerId, options: ClientOptions) -> Client {
        let shared = Arc::new(Shared {
            state: Mutex::new(State::default()),
            cond: Condvar::new(),
        });
        let (tx, rx) = unbounded();
        let worker_shared = Arc::clone(&shared);
        let worker_peer = peer.clone();
        let worker = thread::Builder::new()
            .name(format!("finj-client-{peer}"))
            .spawn(move || connection_loop(worker_peer, options, worker_shared, tx))
            .expect("spawn client thread");
        Client {
            peer,
            shared,
            events: rx,
            worker: Some(worker),
        }
    }

    pub fn peer(&self) -> &PeerId {
        &self.peer
    }

    pub fn events(&self) -> &Receiver<ClientEvent> {
        &self.events
    }

    pub fn is_connected(&self) -> bool {
        self.shared.state.lock().unwrap().connected
    }

    /// Queues `msg` for delivery.
    pub fn send(&self, msg: Message) -> Result<(), ProtocolError> {
        // Reject unencodable messages now rather than inside the writer.
        encode_message(&msg)?;
        let mut state = self.shared.state.lock().unwrap();
        if state.closed {
            return Err(ProtocolError::Closed);
        }
        state.queue.push_back(msg);
        self.shared.cond.notify_all();
        Ok(())
    }

    pub fn queued(&self) -> usize {
        let state = self.shared.state.lock().unwrap();
        state.queue.len() + usize::from(state.in_flight)
    }

    /// Waits until every queued message has been written, up to `timeout`.
    pub fn flush(&self, timeout: Duration) -> bool {
        let deadline = Instant::now() + timeout;
        let mut state = self.shared.state.lock().unwrap();
        while !state.queue.is_empty() || state.in_flight {
            let now = Instant::now();
            if now >= deadline || state.closed {
                return false;
            }
            state = self.shared.cond.wait_timeout(state, deadline - now).unwrap().0;
        }
        true
    }

    /// Closes the connection. Messages still queued are returned undelivered.
    pub fn close(&mut self) -> Vec<Message> {
        let pending = {
            let mut state = self.shared.state.lock().unwrap();
            state.closed = true;
            if let Some(stream) = &state.stream {
                let _ = stream.shutdown(Shutdown::Both);
            }
            self.shared.cond.notify_all();
            state.queue.drain(..).collect()
        };
        if let Some(worker) = self.worker.take() {
            let _ = worker.join();
        }
        pending
    }
}

impl Drop for Client {
    fn drop(&mut self) {
        self.close();
    }
}

fn open(peer: &PeerId) -> io::Result<TcpStream> {
    let mut last = io::Error::new(io::ErrorKind::NotFound, "address did not resolve");
    for addr in (peer.host.as_str(), peer.port).to_socket_addrs()? {
        match TcpStream::connect_timeout(&addr, CONNECT_TIMEOUT) {
            Ok(stream) => {
                stream.set_nodelay(true)?;
                stream.set_write_timeout(Some(WRITE_TIMEOUT))?;
                return Ok(stream);
            }
            Err(e) => last = e,
        }
    }
    Err(last)
}

fn connection_loop(
    peer: PeerId,
    options: ClientOptions,
    shared: Arc<Shared>,
    events: Sender<ClientEvent>,
) {
    loop {
        if shared.state.lock().unwrap().closed {
            return;
        }
        match open(&peer) {
            Ok(stream) => {
                let reason = serve(&stream, &options, &shared, &events);
                let closed = {
                    let mut state = shared.state.lock().unwrap();
                    state.connected = false;
                    state.stream = None;
                    shared.cond.notify_all();
                    state.closed
                };
                if closed {
                    return;
                }
                debug!("lost connection to {peer}: {reason:?}");
                let _ = events.send(ClientEvent::Disconnected(reason));
            }
            Err(e) => debug!("connect to {peer} failed: {e}"),
        }
        let state = shared.state.lock().unwrap();
        if state.closed {
            return;
        }
        let _ = shared
            .cond
            .wait_timeout_while(state, options.retry_interval, |s| !s.closed)
            .unwrap();
    }
}

/// Runs one connection until it breaks or the client is closed.
fn serve(
    stream: &TcpStream,
    options: &ClientOptions,
    shared: &Arc<Shared>,
    events: &Sender<ClientEvent>,
) -> Option<String> {
    let (reader, mut writer) = match (stream.try_clone(), stream.try_clone()) {
        (Ok(r), Ok(w)) => (r, w),
        (Err(e), _) | (_, Err(e)) => return Some(e.to_string()),
    };
    {
        let mut state = shared.state.lock().unwrap();
        if state.closed {
            return None;
        }
        state.connected = true;
        state.broken = false;
        state.stream = stream.try_clone().ok();
    }
    let _ = events.send(ClientEvent::Connected);

    let reader_shared = Arc::clone(shared);
    let reader_events = events.clone();
    let reader_thread = thread::spawn(move || read_loop(reader, reader_shared, reader_events));

    let mut reason = None;
    let greeting = options.greeting.as_ref().map(|g| g()).unwrap_or_default();
    for msg in &greeting {
        if let Err(e) = write_one(&mut writer, msg) {
            reason = Some(e.to_string());
            break;
        }
    }

    while reason.is_none() {
        let msg = {
            let mut state = shared.state.lock().unwrap();
            while state.queue.is_empty() && !state.closed && !state.broken {
                state = shared.cond.wait(state).unwrap();
            }
            if state.closed || state.broken {
                break;
            }
            state.in_flight = true;
            state.queue.pop_front().unwrap()
        };
        let result = write_one(&mut writer, &msg);
        let mut state = shared.state.lock().unwrap();
        state.in_flight = false;
        if let Err(e) = result {
            // Not acknowledged by the socket: keep it for the next connection.
            state.queue.push_front(msg);
            reason = Some(e.to_string());
        }
        shared.cond.notify_all();
    }

    let _ = stream.shutdown(Shutdown::Both);
    let read_reason = reader_thread.join().unwrap_or(None);
    reason.or(read_reason)
}

fn write_one(writer: &mut TcpStream, msg: &Message) -> Result<(), ProtocolError> {
    let frame = encode_message(msg)?;
    writer.write_all(&frame)?;
    writer.flush()?;
    Ok(())
}

fn read_loop(
    mut reader: TcpStream,
    shared: Arc<Shared>,
    events: Sender<ClientEvent>,
) -> Option<String> {
    let reason = loop {
        match read_message(&mut reader) {
            Ok(Some(msg)) => {
                let _ = events.send(ClientEvent::Message(msg));
            }
            Ok(None) | Err(ProtocolError::Closed) => break Some("connection closed by peer".into()),
            Err(e) => break Some(e.to_string()),
        }
    };
    let mut state = shared.state.lock().unwrap();
    state.broken = true;
    shared.cond.notify_all();
    reason
}
