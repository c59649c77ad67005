//! Blocking framed connections over TCP.

use std::io::{ErrorKind, Read, Write};
use std::net::TcpStream;
use std::time::Instant;

use crate::error::{Result, TransportError};
use crate::frame::{decode_frame, encode_frame, Message};

pub struct Conn {
    stream: TcpStream,
    buf: Vec<u8>,
    peer: String,
}

impl Conn {
    pub fn new(stream: TcpStream, peer: impl Into<String>) -> Result<Self> {
        stream.set_nodelay(true)?;
        Ok(Self {
            stream,
            buf: Vec::new(),
            peer: peer.into(),
        })
    }

    pub fn peer(&self) -> &str {
        &self.peer
    }

    pub fn set_peer(&mut self, peer: impl Into<String>) {
        self.peer = peer.into();
    }

    pub fn send(&mut self, msg: &Message) -> Result<()> {
        let frame = encode_frame(msg).map_err(|e| TransportError::Protocol(format!("encoding {}: {e}", msg.kind().name())))?;
        self.send_raw(&frame)
    }

    pub fn send_raw(&mut self, frame: &[u8]) -> Result<()> {
        self.stream.write_all(frame).map_err(|e| self.io_error(e))
    }

    fn io_error(&self, e: std::io::Error) -> TransportError {
        match e.kind() {
            ErrorKind::BrokenPipe | ErrorKind::ConnectionReset | ErrorKind::ConnectionAborted | ErrorKind::UnexpectedEof => {
                TransportError::Disconnected { peer: self.peer.clone() }
            }
            _ => TransportError::Io(e),
        }
    }

    /// Next message, waiting until `deadline` if given. `round` labels a timeout.
    pub fn recv(&mut self, deadline: Option<Instant>, round: usize) -> Result<Message> {
        let mut chunk = vec![0u8; 64 * 1024];
        loop {
            if let Some((msg, used)) = decode_frame(&self.buf)? {
                self.buf.drain(..used);
                return Ok(msg);
            }
            let timeout = match deadline {
                Some(d) => {
                    let left = d.saturating_duration_since(Instant::now());
                    if left.is_zero() {
                        return Err(self.timeout(round));
                    }
                    Some(left)
                }
                None => None,
            };
            self.stream.set_read_timeout(timeout)?;
            match self.stream.read(&mut chunk) {
                Ok(0) => return Err(TransportError::Disconnected { peer: self.peer.clone() }),
                Ok(n) => self.buf.extend_from_slice(&chunk[..n]),
                Err(e) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut) => {
                    return Err(self.timeout(round))
                }
                Err(e) if e.kind() == ErrorKind::Interrupted => {}
                Err(e) => return Err(self.io_error(e)),
            }
        }
    }

    fn timeout(&self, round: usize) -> TransportError {
        TransportError::Timeout {
            round,
            client: self.peer.clone(),
        }
    }
}
