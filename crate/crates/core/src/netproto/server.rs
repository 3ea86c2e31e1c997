use std::collections::HashMap;
use std::io::{self, Write};
use std::net::{Shutdown, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::Duration;

use crossbeam_channel::{unbounded, Receiver, Sender};
use log::{debug, warn};

use super::{encode_message, read_message, PeerId, ProtocolError};
use crate::model::Message;

const WRITE_TIMEOUT: Duration = Duration::from_secs(5);
const ACCEPT_POLL: Duration = Duration::from_millis(50);

/// What a server reports to its owner. Events of one peer arrive in order.
#[derive(Debug, Clone, PartialEq)]
pub enum ServerEvent {
    Connected(PeerId),
    Message(PeerId, Message),
    /// The peer went away; the string describes a protocol or I/O failure.
    Disconnected(PeerId, Option<String>),
}

struct Shared {
    peers: Mutex<HashMap<PeerId, Arc<Mutex<TcpStream>>>>,
    events: Sender<ServerEvent>,
    stop: AtomicBool,
}

impl Shared {
    fn drop_peer(&self, peer: &PeerId) {
        if let Some(stream) = self.peers.lock().unwrap().remove(peer) {
            let _ = stream.lock().unwrap().shutdown(Shutdown::Both);
        }
    }
}

/// Message server accepting any number of concurrent clients.
///
/// Cloning yields another handle to the same server; sends are safe from
/// any thread.
#[derive(Clone)]
pub struct Server {
    shared: Arc<Shared>,
    port: u16,
    acceptor: Arc<Mutex<Option<JoinHandle<()>>>>,
}

impl Server {
    /// Binds all interfaces on `port` (0 picks a free port) and starts
    /// accepting connections.
    pub fn bind(port: u16) -> io::Result<(Server, Receiver<ServerEvent>)> {
        let listener = TcpListener::bind(("0.0.0.0", port))?;
        let port = listener.local_addr()?.port();
        listener.set_nonblocking(true)?;
        let (tx, rx) = unbounded();
        let shared = Arc::new(Shared {
            peers: Mutex::new(HashMap::new()),
            events: tx,
            stop: AtomicBool::new(false),
        });
        let accept_shared = Arc::clone(&shared);
        let acceptor = thread::Builder::new()
            .name(format!("finj-accept-{port}"))
            .spawn(move || accept_loop(listener, accept_shared))?;
        Ok((
            Server {
                shared,
                port,
                acceptor: Arc::new(Mutex::new(Some(acceptor))),
            },
            rx,
        ))
    }

    pub fn local_port(&self) -> u16 {
        self.port
    }

    pub fn peers(&self) -> Vec<PeerId> {
        self.shared.peers.lock().unwrap().keys().cloned().collect()
    }

    /// Sends `msg` to every connected peer and returns how many accepted it.
    /// Peers whose socket fails are dropped.
    pub fn broadcast(&self, msg: &Message) -> Result<usize, ProtocolError> {
        let frame = encode_message(msg)?;
        let targets: Vec<_> = self
            .shared
            .peers
            .lock()
            .unwrap()
            .iter()
            .map(|(p, s)| (p.clone(), Arc::clone(s)))
            .collect();
        let mut delivered = 0;
        for (peer, stream) in targets {
            if write_frame(&stream, &frame).is_ok() {
                delivered += 1;
            } else {
                debug!("dropping {peer} after failed write");
                self.shared.drop_peer(&peer);
            }
        }
        Ok(delivered)
    }

    pub fn send_to(&self, peer: &PeerId, msg: &Message) -> Result<(), ProtocolError> {
        let frame = encode_message(msg)?;
        let stream = self
            .shared
            .peers
            .lock()
            .unwrap()
            .get(peer)
            .cloned()
            .ok_or(ProtocolError::Closed)?;
        write_frame(&stream, &frame).map_err(|e| {
            self.shared.drop_peer(peer);
            ProtocolError::Io(e)
        })
    }

    pub fn disconnect(&self, peer: &PeerId) {
        self.shared.drop_peer(peer);
    }

    /// Stops accepting and closes every connection.
    pub fn shutdown(&self) {
        self.shared.stop.store(true, Ordering::SeqCst);
        if let Some(handle) = self.acceptor.lock().unwrap().take() {
            let _ = handle.join();
        }
        let peers: Vec<_> = self.peers();
        for peer in peers {
            self.shared.drop_peer(&peer);
        }
    }
}

fn write_frame(stream: &Mutex<TcpStream>, frame: &[u8]) -> io::Result<()> {
    let mut stream = stream.lock().unwrap();
    stream.write_all(frame)?;
    stream.flush()
}

fn accept_loop(listener: TcpListener, shared: Arc<Shared>) {
    while !shared.stop.load(Ordering::SeqCst) {
        match listener.accept() {
            Ok((stream, addr)) => {
                let peer = PeerId::from(addr);
                if let Err(e) = register(stream, peer.clone(), &shared) {
                    warn!("rejecting connection from {peer}: {e}");
                }
            }
            Err(e) if e.kind() == io::ErrorKind::WouldBlock => thread::sleep(ACCEPT_POLL),
            Err(e) => {
                warn!("accept failed: {e}");
                thread::sleep(ACCEPT_POLL);
            }
        }
    }
}

fn register(stream: TcpStream, peer: PeerId, shared: &Arc<Shared>) -> io::Result<()> {
    stream.set_nonblocking(false)?;
    stream.set_nodelay(true)?;
    stream.set_write_timeout(Some(WRITE_TIMEOUT))?;
    let reader = stream.try_clone()?;
    shared
        .peers
        .lock()
        .unwrap()
        .insert(peer.clone(), Arc::new(Mutex::new(stream)));
    let _ = shared.events.send(ServerEvent::Connected(peer.clone()));
    let shared = Arc::clone(shared);
    thread::Builder::new()
        .name(format!("finj-peer-{peer}"))
        .spawn(move || read_loop(reader, peer, shared))?;
    Ok(())
}

fn read_loop(mut stream: TcpStream, peer: PeerId, shared: Arc<Shared>) {
    let reason = loop {
        match read_message(&mut stream) {
            Ok(Some(msg)) => {
                if shared
                    .events
                    .send(ServerEvent::Message(peer.clone(), msg))
                    .is_err()
                {
                    break None;
                }
            }
            Ok(None) => break None,
            Err(ProtocolError::Closed) => break None,
            Err(e) => break Some(e.to_string()),
        }
    };
    if let Some(reason) = &reason {
        warn!("dropping {peer}: {reason}");
    }
    shared.drop_peer(&peer);
    let _ = stream.shutdown(Shutdown::Both);
    let _ = shared.events.send(ServerEvent::Disconnected(peer, reason));
}
