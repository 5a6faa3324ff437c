//! TCP front-end speaking the wire protocol, one thread per connection.
//!
//! The first channel of a session to submit blocks until the other channel
//! arrives or the pairing timeout passes, then both receive the verdict.

use std::io::{self, BufReader, BufWriter};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use super::wire::{read_message, write_message, Message, WireError};
use super::{Ack, Server, PAIRING_TIMEOUT_MS};
use crate::formspec::to_document;

pub struct Service {
    server: Arc<Server>,
    started: Instant,
    decided: (Mutex<()>, Condvar),
    timeout: Duration,
}

impl Service {
    pub fn new(server: Arc<Server>) -> Self {
        Self::with_timeout(server, Duration::from_millis(PAIRING_TIMEOUT_MS))
    }

    /// A service whose waiting channels give up after `timeout` of wall time.
    pub fn with_timeout(server: Arc<Server>, timeout: Duration) -> Self {
        Self { server, started: Instant::now(), decided: (Mutex::new(()), Condvar::new()), timeout }
    }

    fn now_ms(&self) -> u64 {
        self.started.elapsed().as_millis() as u64
    }

    fn wait_for_verdict(&self, token: &str) -> Message {
        let deadline = Instant::now() + self.timeout;
        let mut guard = self.decided.0.lock().unwrap_or_else(|e| e.into_inner());
        loop {
            if let Some(verdict) = self.server.verdict(token) {
                return Message::Verdict { token: token.to_string(), verdict };
            }
            let now = Instant::now();
            if now >= deadline {
                drop(guard);
                self.server.expire(self.now_ms().max(PAIRING_TIMEOUT_MS));
                let verdict = self.server.verdict(token).unwrap_or_else(super::Verdict::timed_out);
                return Message::Verdict { token: token.to_string(), verdict };
            }
            guard = self
                .decided
                .1
                .wait_timeout(guard, (deadline - now).min(Duration::from_millis(200)))
                .unwrap_or_else(|e| e.into_inner())
                .0;
        }
    }

    fn after_submit(&self, token: &str, ack: Result<Ack, super::ServerError>) -> Message {
        match ack {
            Ok(Ack::Verdict(verdict)) => {
                let _g = self.decided.0.lock().unwrap_or_else(|e| e.into_inner());
                self.decided.1.notify_all();
                Message::Verdict { token: token.to_string(), verdict }
            }
            Ok(Ack::Pending) => self.wait_for_verdict(token),
            Err(e) => Message::Error { reason: e.to_string() },
        }
    }

    pub fn handle(&self, msg: Message) -> Message {
        match msg {
            Message::SpecReq { page_id } => match self.server.serve_spec(&page_id) {
                Ok(spec) => Message::SpecResp { document: to_document(&spec) },
                Err(e) => Message::Error { reason: e.to_string() },
            },
            Message::ClientSubmit { token, page_id, fields } => {
                let ack = self.server.submit_client(&token, &page_id, fields, self.now_ms());
                self.after_submit(&token, ack)
            }
            Message::PoiSubmit { poi } => {
                let token = poi.session_token.clone();
                let ack = self.server.submit_poi(poi, self.now_ms());
                self.after_submit(&token, ack)
            }
            other => Message::Error { reason: format!("unexpected message {}", other.to_payload().split(' ').next().unwrap_or("")) },
        }
    }

    fn connection(&self, stream: TcpStream) -> Result<(), WireError> {
        let peer = stream.peer_addr().ok();
        let mut reader = BufReader::new(stream.try_clone()?);
        let mut writer = BufWriter::new(stream);
        loop {
            let reply = match read_message(&mut reader) {
                Ok(Some(msg)) => self.handle(msg),
                Ok(None) => return Ok(()),
                Err(WireError::Io(e)) => return Err(WireError::Io(e)),
                Err(e) => {
                    write_message(&mut writer, &Message::Error { reason: e.to_string() })?;
                    log::warn!("{peer:?}: {e}");
                    return Ok(());
                }
            };
            write_message(&mut writer, &reply)?;
        }
    }

    /// Accepts connections until `stop` is set.
    pub fn run(self: Arc<Self>, listener: TcpListener, stop: Arc<AtomicBool>) -> io::Result<()> {
        listener.set_nonblocking(true)?;
        log::info!("listening on {}", listener.local_addr()?);
        while !stop.load(Ordering::Relaxed) {
            match listener.accept() {
                Ok((stream, peer)) => {
                    stream.set_nonblocking(false)?;
                    let svc = Arc::clone(&self);
                    thread::spawn(move || {
                        if let Err(e) = svc.connection(stream) {
                            log::debug!("{peer}: {e}");
                        }
                    });
                }
                Err(e) if e.kind() == io::ErrorKind::WouldBlock => thread::sleep(Duration::from_millis(20)),
                Err(e) => return Err(e),
            }
        }
        log::info!("shutting down");
        Ok(())
    }
}

/// Sends one message and waits for the reply.
pub fn request<A: ToSocketAddrs>(addr: A, msg: &Message) -> Result<Message, WireError> {
    let stream = TcpStream::connect(addr)?;
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut writer = BufWriter::new(stream);
    write_message(&mut writer, msg)?;
    read_message(&mut reader)?.ok_or_else(|| WireError::Io(io::ErrorKind::UnexpectedEof.into()))
}

/// Binds a listener and runs the service on a background thread.
pub fn spawn(server: Arc<Server>, addr: &str, timeout: Duration) -> io::Result<(SocketAddr, Arc<AtomicBool>, thread::JoinHandle<io::Result<()>>)> {
    let listener = TcpListener::bind(addr)?;
    let local = listener.local_addr()?;
    let stop = Arc::new(AtomicBool::new(false));
    let svc = Arc::new(Service::with_timeout(server, timeout));
    let flag = Arc::clone(&stop);
    let handle = thread::spawn(move || svc.run(listener, flag));
    Ok((local, stop, handle))
}
