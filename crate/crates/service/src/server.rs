use std::io;
use std::net::{TcpListener, TcpStream};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, TryRecvError};
use std::sync::{Arc, Condvar, Mutex};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use crate::protocol::{read_message, write_json, Response};
use crate::session::{Session, Snapshot};

/// Single-slot mailbox: a new value replaces any value not yet taken.
pub struct LatestSlot<T> {
    state: Mutex<(Option<T>, bool)>,
    ready: Condvar,
}

impl<T> Default for LatestSlot<T> {
    fn default() -> Self {
        Self { state: Mutex::new((None, false)), ready: Condvar::new() }
    }
}

impl<T> LatestSlot<T> {
    /// Returns true if an untaken value was replaced.
    pub fn put(&self, value: T) -> bool {
        let mut s = self.state.lock().unwrap();
        let dropped = s.0.replace(value).is_some();
        self.ready.notify_one();
        dropped
    }

    /// Blocks for the next value; `None` once closed and drained.
    pub fn take(&self) -> Option<T> {
        let mut s = self.state.lock().unwrap();
        loop {
            if let Some(v) = s.0.take() {
                return Some(v);
            }
            if s.1 {
                return None;
            }
            s = self.ready.wait(s).unwrap();
        }
    }

    pub fn close(&self) {
        self.state.lock().unwrap().1 = true;
        self.ready.notify_all();
    }
}

enum Inbound {
    Message(Vec<u8>),
    Closed,
}

type Writer = Arc<Mutex<TcpStream>>;

fn send(writer: &Writer, value: &impl serde::Serialize) -> io::Result<()> {
    write_json(&mut *writer.lock().unwrap(), value)
}

/// Accepts connections forever, each with a fresh session from `make_session`.
pub fn serve(listener: TcpListener, make_session: impl Fn() -> Session + Send + Sync + 'static) -> io::Result<()> {
    let make_session = Arc::new(make_session);
    for stream in listener.incoming() {
        let stream = stream?;
        let peer = stream.peer_addr().map(|a| a.to_string()).unwrap_or_default();
        log::info!("connection from {peer}");
        spawn_connection(stream, make_session());
    }
    Ok(())
}

/// Drives one session over `stream` on background threads.
pub fn spawn_connection(stream: TcpStream, session: Session) -> JoinHandle<()> {
    thread::spawn(move || {
        if let Err(e) = run_connection(stream, session) {
            log::info!("connection closed: {e}");
        }
    })
}

fn run_connection(stream: TcpStream, mut session: Session) -> io::Result<()> {
    stream.set_nodelay(true)?;
    let writer: Writer = Arc::new(Mutex::new(stream.try_clone()?));
    let (tx, rx) = mpsc::channel();
    let mut reader = stream.try_clone()?;
    thread::spawn(move || {
        loop {
            match read_message(&mut reader) {
                Ok(Some(m)) => {
                    if tx.send(Inbound::Message(m)).is_err() {
                        return;
                    }
                }
                Ok(None) | Err(_) => {
                    let _ = tx.send(Inbound::Closed);
                    return;
                }
            }
        }
    });

    let frames: Arc<LatestSlot<Snapshot>> = Arc::default();
    let encoder = {
        let frames = frames.clone();
        let writer = writer.clone();
        thread::spawn(move || {
            while let Some(snap) = frames.take() {
                if send(&writer, &snap.encode()).is_err() {
                    return;
                }
            }
        })
    };

    let result = command_loop(&mut session, &rx, &writer, &frames);
    frames.close();
    let _ = encoder.join();
    let _ = stream.shutdown(std::net::Shutdown::Both);
    result
}

fn command_loop(
    session: &mut Session,
    rx: &Receiver<Inbound>,
    writer: &Writer,
    frames: &LatestSlot<Snapshot>,
) -> io::Result<()> {
    let interval = Duration::from_secs_f64(1.0 / session.config().service.max_steps_per_sec);
    let mut next_step = Instant::now();
    loop {
        // Commands are applied between steps only.
        loop {
            let msg = if session.is_running() {
                let wait = next_step.saturating_duration_since(Instant::now());
                match rx.recv_timeout(wait) {
                    Ok(m) => m,
                    Err(RecvTimeoutError::Timeout) => break,
                    Err(RecvTimeoutError::Disconnected) => return Ok(()),
                }
            } else {
                match rx.recv() {
                    Ok(m) => m,
                    Err(_) => return Ok(()),
                }
            };
            let Inbound::Message(body) = msg else {
                return Ok(());
            };
            let was_running = session.is_running();
            let resp = session.handle_text(&body);
            send(writer, &resp)?;
            if session.is_running() && !was_running {
                next_step = Instant::now();
                break;
            }
        }
        if !session.is_running() {
            continue;
        }
        next_step += interval;
        match session.advance() {
            Ok(Some(snap)) => {
                if frames.put(snap) {
                    log::debug!("client slow; dropped a frame");
                }
            }
            Ok(None) => {}
            Err(e) => {
                let mut r = Response::error(None, format!("simulation stopped: {e}"));
                r.phase = session.phase();
                r.step = Some(session.step());
                send(writer, &r)?;
            }
        }
        // Drain anything that arrived during the step without waiting.
        loop {
            match rx.try_recv() {
                Ok(Inbound::Message(body)) => {
                    let resp = session.handle_text(&body);
                    send(writer, &resp)?;
                }
                Ok(Inbound::Closed) | Err(TryRecvError::Disconnected) => return Ok(()),
                Err(TryRecvError::Empty) => break,
            }
        }
        if next_step < Instant::now() {
            next_step = Instant::now();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn latest_slot_keeps_only_the_newest() {
        let slot = LatestSlot::default();
        assert!(!slot.put(1));
        assert!(slot.put(2));
        assert!(slot.put(3));
        assert_eq!(slot.take(), Some(3));
        slot.close();
        assert_eq!(slot.take(), None);
    }

    #[test]
    fn close_delivers_pending_value_first() {
        let slot = LatestSlot::default();
        slot.put("a");
        slot.close();
        assert_eq!(slot.take(), Some("a"));
        assert_eq!(slot.take(), None);
    }
}
