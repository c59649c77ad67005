//! Command-line driver: data generation, federated and baseline training
//! (in-process or over TCP), and saliency export from one TOML config.

pub mod commands;
pub mod config;
pub mod output;

use std::fmt;

use fleeg_core::Error as CoreError;
use fleeg_transport::TransportError;

pub const EXIT_OK: i32 = 0;
pub const EXIT_OTHER: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_PROTOCOL: i32 = 3;
pub const EXIT_DIVERGENCE: i32 = 4;

/// Context marker for failures caused by the configuration or its inputs.
#[derive(Debug)]
pub struct ConfigError;

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("configuration error")
    }
}

fn core_code(e: &CoreError) -> i32 {
    match e {
        CoreError::Divergence { .. } => EXIT_DIVERGENCE,
        CoreError::Load(_)
        | CoreError::Incompatible { .. }
        | CoreError::UnknownDataset { .. }
        | CoreError::Infeasible(_)
        | CoreError::Contract(_) => EXIT_CONFIG,
        _ => EXIT_OTHER,
    }
}

/// Maps an error chain to the process exit code. The outermost recognized
/// cause wins.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    if err.downcast_ref::<ConfigError>().is_some() {
        return EXIT_CONFIG;
    }
    for cause in err.chain() {
        if let Some(t) = cause.downcast_ref::<TransportError>() {
            return match t {
                TransportError::Core(c) if matches!(c, CoreError::Divergence { .. }) => EXIT_DIVERGENCE,
                _ => EXIT_PROTOCOL,
            };
        }
        if let Some(c) = cause.downcast_ref::<CoreError>() {
            return core_code(c);
        }
    }
    EXIT_OTHER
}

/// The error chain as one line, without the exit-code marker.
pub fn describe(err: &anyhow::Error) -> String {
    let marker = ConfigError.to_string();
    let mut parts: Vec<String> = Vec::new();
    for s in err.chain().map(|c| c.to_string()) {
        if s != marker && !parts.last().is_some_and(|p| p.ends_with(&s)) {
            parts.push(s);
        }
    }
    parts.join(": ")
}
