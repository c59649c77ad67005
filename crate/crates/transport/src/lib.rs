//! Bit-exact wire encoding of weight sets and the framed TCP protocol that
//! lets a federated run span one server process and one process per client.
//!
//! Integrity is checked with CRC-32; there is no authentication or encryption.

pub mod client;
pub mod codec;
pub mod conn;
pub mod error;
pub mod frame;
pub mod server;

pub use client::run_client;
pub use codec::{decode_weights, encode_weights};
pub use error::{CodecError, FrameError, Result, TransportError};
pub use frame::{decode_frame, encode_frame, Message, MessageType, Registration, MAGIC};
pub use server::{serve, ServerConfig, ServerEvent, DEFAULT_ROUND_TIMEOUT};
