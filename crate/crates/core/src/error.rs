use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch, expected {expected}, found {found}")]
    Shape {
        op: String,
        expected: String,
        found: String,
    },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("non-finite value at flat index {index} after {op}")]
    NonFinite { op: &'static str, index: usize },

    #[error("unknown dataset {name:?}; valid names: {}", valid.join(", "))]
    UnknownDataset {
        name: String,
        valid: Vec<&'static str>,
    },

    #[error("no feasible local architecture for {0}")]
    Infeasible(String),

    #[error("incompatible weight entry {index}: expected {expected}, found {found}")]
    Incompatible {
        index: usize,
        expected: String,
        found: String,
    },

    #[error("training diverged on client {client} (round {round}, batch {batch}): loss {loss}")]
    Divergence {
        client: usize,
        round: usize,
        batch: usize,
        loss: f64,
    },

    #[error("incomplete round {round}: no update from client {client}")]
    IncompleteRound { round: usize, client: usize },

    #[error("client {client} failed: {reason}")]
    ClientFailed { client: usize, reason: String },

    #[error("fold plans do not pair: {0}")]
    Pairing(String),

    #[error(transparent)]
    Load(#[from] LoadError),
}

/// Failures while reading an `FTR1` trial container.
#[derive(Debug, Error)]
pub enum LoadError {
    #[error("{path}: bad magic {found:?}, expected \"FTR1\"")]
    BadMagic { path: PathBuf, found: [u8; 4] },

    #[error("{path}: truncated at byte {offset} (needed {needed} more)")]
    Truncated {
        path: PathBuf,
        offset: usize,
        needed: usize,
    },

    #[error("{path}: payload holds {actual} bytes but header declares {declared}")]
    ShapeMismatch {
        path: PathBuf,
        declared: usize,
        actual: usize,
    },

    #[error("{path}: {reason}")]
    Invalid { path: PathBuf, reason: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub(crate) fn shape_err(op: &str, expected: impl std::fmt::Debug, found: impl std::fmt::Debug) -> Error {
    Error::Shape {
        op: op.to_string(),
        expected: format!("{expected:?}"),
        found: format!("{found:?}"),
    }
}

pub(crate) fn contract(msg: impl Into<String>) -> Error {
    Error::Contract(msg.into())
}
