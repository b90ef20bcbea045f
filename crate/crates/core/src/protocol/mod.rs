//! Command framing, command queueing and the live server.
//!
//! Every command is three bytes on the wire:
//!
//! ```text
//! 0xFA  code  0xFA ^ code
//! ```
//!
//! so code 5 is `FA 05 FF`. Codes 107..=202 and 207..=255 are reserved.
//! Telemetry travels on a separate connection as JSON lines.

pub mod queue;
pub mod server;

use thiserror::Error;

pub use queue::{CommandQueue, QueueError};
pub use server::{Driver, DriverConfig, Server, ServerHandle};

pub const MAGIC: u8 = 0xFA;
pub const FRAME_LEN: usize = 3;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ProtocolError {
    #[error("bad magic byte {0:#04x}")]
    BadMagic(u8),
    #[error("bad checksum: expected {expected:#04x}, found {found:#04x}")]
    BadChecksum { expected: u8, found: u8 },
    #[error("code {0} is reserved")]
    Reserved(u8),
    #[error("frame must be {FRAME_LEN} bytes, got {0}")]
    Length(usize),
}

pub fn is_reserved(code: u8) -> bool {
    matches!(code, 107..=202 | 207..=255)
}

/// A validated command code.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct CommandFrame {
    code: u8,
}

impl CommandFrame {
    pub fn new(code: u8) -> Result<Self, ProtocolError> {
        if is_reserved(code) {
            Err(ProtocolError::Reserved(code))
        } else {
            Ok(Self { code })
        }
    }

    pub fn code(self) -> u8 {
        self.code
    }
}

pub fn checksum(code: u8) -> u8 {
    MAGIC ^ code
}

pub fn encode_command(c: CommandFrame) -> [u8; FRAME_LEN] {
    [MAGIC, c.code, checksum(c.code)]
}

/// Encode a sequence of codes, failing on the first reserved one.
pub fn encode_codes(codes: &[u8]) -> Result<Vec<u8>, ProtocolError> {
    let mut out = Vec::with_capacity(codes.len() * FRAME_LEN);
    for &c in codes {
        out.extend_from_slice(&encode_command(CommandFrame::new(c)?));
    }
    Ok(out)
}

pub fn decode_command(bytes: &[u8]) -> Result<CommandFrame, ProtocolError> {
    let &[magic, code, sum] = bytes else {
        return Err(ProtocolError::Length(bytes.len()));
    };
    if magic != MAGIC {
        return Err(ProtocolError::BadMagic(magic));
    }
    if sum != checksum(code) {
        return Err(ProtocolError::BadChecksum {
            expected: checksum(code),
            found: sum,
        });
    }
    CommandFrame::new(code)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Decoded {
    Frame(CommandFrame),
    /// A well-formed frame carrying a reserved code.
    Rejected(ProtocolError),
}

/// Incremental decoder over an arbitrary byte stream.
///
/// Bytes before a magic byte are skipped. A candidate frame with a bad
/// checksum drops only its magic byte, so a real frame starting inside it is
/// still found.
#[derive(Debug, Default, Clone)]
pub struct FrameDecoder {
    buf: std::collections::VecDeque<u8>,
    skipped: usize,
}

impl FrameDecoder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, bytes: &[u8]) {
        self.buf.extend(bytes);
    }

    /// Bytes discarded so far while resynchronizing.
    pub fn skipped(&self) -> usize {
        self.skipped
    }

    pub fn next_decoded(&mut self) -> Option<Decoded> {
        loop {
            while self.buf.front().is_some_and(|&b| b != MAGIC) {
                self.buf.pop_front();
                self.skipped += 1;
            }
            if self.buf.len() < FRAME_LEN {
                return None;
            }
            let frame = [self.buf[0], self.buf[1], self.buf[2]];
            match decode_command(&frame) {
                Ok(f) => {
                    self.buf.drain(..FRAME_LEN);
                    return Some(Decoded::Frame(f));
                }
                Err(e @ ProtocolError::Reserved(_)) => {
                    self.buf.drain(..FRAME_LEN);
                    return Some(Decoded::Rejected(e));
                }
                Err(_) => {
                    self.buf.pop_front();
                    self.skipped += 1;
                }
            }
        }
    }

    /// Push `bytes` and collect every complete result.
    pub fn decode(&mut self, bytes: &[u8]) -> Vec<Decoded> {
        self.push(bytes);
        std::iter::from_fn(|| self.next_decoded()).collect()
    }
}
