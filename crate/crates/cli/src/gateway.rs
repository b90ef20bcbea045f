//! WebSocket bridge for browser clients.
//!
//! Every connection receives the telemetry history and then each new frame
//! as one text message holding one JSON line (without the newline). Binary
//! messages from a client are fed to the command decoder, so they must carry
//! the same `FA code FA^code` frames as the TCP command port. Only one client
//! commands at a time: the first to send a binary message holds the command
//! channel until it disconnects, and frames from anyone else are refused with
//! a negative command acknowledgement.

use std::io::ErrorKind;
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::Duration;

use favbot_core::protocol::server::forward_bytes;
use favbot_core::protocol::{CommandQueue, Decoded, FrameDecoder, ProtocolError};
use favbot_core::telemetry::{Event, TelemetryLog};
use tungstenite::{Error as WsError, Message, WebSocket};

const POLL: Duration = Duration::from_millis(20);

pub const BUSY_DETAIL: &str = "command channel held by another client";

#[derive(Debug, Default)]
struct CommandOwner {
    holder: Mutex<Option<u64>>,
}

impl CommandOwner {
    fn claim(&self, id: u64) -> bool {
        let mut h = self.holder.lock().expect("owner lock poisoned");
        match *h {
            None => {
                *h = Some(id);
                true
            }
            Some(other) => other == id,
        }
    }

    fn release(&self, id: u64) {
        let mut h = self.holder.lock().expect("owner lock poisoned");
        if *h == Some(id) {
            *h = None;
        }
    }
}

pub struct Gateway {
    listener: TcpListener,
}

impl Gateway {
    pub fn bind(addr: impl ToSocketAddrs) -> std::io::Result<Self> {
        Ok(Self {
            listener: TcpListener::bind(addr)?,
        })
    }

    pub fn local_addr(&self) -> std::io::Result<SocketAddr> {
        self.listener.local_addr()
    }

    /// Accept connections until `shutdown` is set.
    pub fn spawn(self, queue: Arc<CommandQueue>, log: TelemetryLog, shutdown: Arc<AtomicBool>) -> std::io::Result<JoinHandle<()>> {
        self.listener.set_nonblocking(true)?;
        let owner = Arc::new(CommandOwner::default());
        let next_id = AtomicU64::new(1);
        Ok(thread::spawn(move || {
            let mut sessions = Vec::new();
            while !shutdown.load(Ordering::Relaxed) {
                match self.listener.accept() {
                    Ok((stream, _)) => {
                        let id = next_id.fetch_add(1, Ordering::Relaxed);
                        let (q, l, sd, o) = (queue.clone(), log.clone(), shutdown.clone(), owner.clone());
                        sessions.push(thread::spawn(move || {
                            let _ = session(stream, id, &q, &l, &sd, &o);
                            o.release(id);
                        }));
                    }
                    Err(e) if e.kind() == ErrorKind::WouldBlock => thread::sleep(POLL),
                    Err(_) => thread::sleep(POLL),
                }
                sessions.retain(|h: &JoinHandle<()>| !h.is_finished());
            }
            for h in sessions {
                let _ = h.join();
            }
        }))
    }
}

fn is_timeout(e: &WsError) -> bool {
    matches!(e, WsError::Io(io) if matches!(io.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut | ErrorKind::Interrupted))
}

fn refuse(bytes: &[u8], log: &TelemetryLog) {
    let mut d = FrameDecoder::new();
    for r in d.decode(bytes) {
        let code = match r {
            Decoded::Frame(f) => f.code(),
            Decoded::Rejected(ProtocolError::Reserved(c)) => c,
            Decoded::Rejected(_) => 0,
        };
        log.append_latest(Event::Command {
            code,
            accepted: false,
            detail: BUSY_DETAIL.to_string(),
        });
    }
}

fn session(
    stream: TcpStream,
    id: u64,
    queue: &CommandQueue,
    log: &TelemetryLog,
    shutdown: &AtomicBool,
    owner: &CommandOwner,
) -> Result<(), WsError> {
    stream.set_nonblocking(false)?;
    stream.set_read_timeout(Some(Duration::from_secs(5)))?;
    let mut ws: WebSocket<TcpStream> = tungstenite::accept(stream).map_err(|e| match e {
        tungstenite::HandshakeError::Failure(e) => e,
        tungstenite::HandshakeError::Interrupted(_) => WsError::Io(ErrorKind::TimedOut.into()),
    })?;
    ws.get_ref().set_read_timeout(Some(POLL))?;

    let (history, rx) = log.subscribe_with_history();
    for f in history {
        ws.write(Message::text(f.to_json_line().trim_end()))?;
    }
    ws.flush()?;
    let mut decoder = FrameDecoder::new();
    loop {
        if shutdown.load(Ordering::Relaxed) {
            let _ = ws.close(None);
            let _ = ws.flush();
            return Ok(());
        }
        let mut wrote = false;
        while let Ok(f) = rx.try_recv() {
            ws.write(Message::text(f.to_json_line().trim_end()))?;
            wrote = true;
        }
        if wrote {
            ws.flush()?;
        }
        match ws.read() {
            Ok(Message::Binary(bytes)) => {
                if owner.claim(id) {
                    forward_bytes(&mut decoder, &bytes, queue, log);
                } else {
                    refuse(&bytes, log);
                }
            }
            Ok(_) => {}
            Err(e) if is_timeout(&e) => {
                // flush any automatic pong queued by the read
                match ws.flush() {
                    Err(e) if !is_timeout(&e) => return Err(e),
                    _ => {}
                }
            }
            Err(WsError::ConnectionClosed | WsError::AlreadyClosed) => return Ok(()),
            Err(e) => return Err(e),
        }
    }
}
