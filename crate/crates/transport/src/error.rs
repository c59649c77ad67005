use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum CodecError {
    #[error("truncated payload at byte {offset} (needed {needed} more)")]
    Truncated { offset: usize, needed: usize },

    #[error("refusing to encode non-finite value {value}")]
    NonFinite { value: f64 },

    #[error("non-finite value at byte {offset}")]
    NonFiniteAt { offset: usize },

    #[error("invalid UTF-8 in name at byte {offset}")]
    Utf8 { offset: usize },

    #[error("{extra} unexpected trailing byte(s)")]
    Trailing { extra: usize },

    #[error("value {0} does not fit in 32 bits")]
    Overflow(usize),

    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Error, PartialEq)]
pub enum FrameError {
    #[error("bad magic {0:?}, expected \"FLG1\"")]
    BadMagic(Vec<u8>),

    #[error("unknown message type {0:#04x}")]
    UnknownType(u8),

    #[error("checksum mismatch: frame says {declared:#010x}, payload hashes to {actual:#010x}")]
    Checksum { declared: u32, actual: u32 },

    #[error("declared payload of {0} bytes exceeds the frame limit")]
    TooLarge(usize),

    #[error("malformed {kind} payload: {source}")]
    Payload {
        kind: &'static str,
        #[source]
        source: CodecError,
    },
}

#[derive(Debug, Error)]
pub enum TransportError {
    #[error("protocol error: {0}")]
    Protocol(String),

    #[error(transparent)]
    Frame(#[from] FrameError),

    #[error("round {round}: timed out waiting for client {client}")]
    Timeout { round: usize, client: String },

    #[error("{peer} disconnected")]
    Disconnected { peer: String },

    #[error("peer reported: {0}")]
    Remote(String),

    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Core(#[from] fleeg_core::Error),
}

pub type Result<T, E = TransportError> = std::result::Result<T, E>;
