//! Library side of the `twinnav` command: run configuration, SVG export and
//! the command implementations.

pub mod commands;
pub mod config;
pub mod plot;

use std::fmt;

/// A failed command, carrying the process exit code class.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Runtime(String),
    Protocol(String),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Runtime(_) => 2,
            Failure::Protocol(_) => 3,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Usage(m) => write!(f, "usage error: {m}"),
            Failure::Runtime(m) => write!(f, "error: {m}"),
            Failure::Protocol(m) => write!(f, "protocol error: {m}"),
        }
    }
}

impl std::error::Error for Failure {}

impl From<twinnav_core::Error> for Failure {
    fn from(e: twinnav_core::Error) -> Self {
        match e {
            twinnav_core::Error::Protocol { .. } => Failure::Protocol(e.to_string()),
            _ => Failure::Runtime(e.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}
