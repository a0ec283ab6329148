//! Host-side companion to `premover-core`: configuration, checkpoints, the
//! parallel evaluation harness, report files, the overhead benchmark, the
//! command line and the live typing gateway.

pub mod bench;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod gateway;
pub mod harness;
pub mod report;

use std::fmt;

/// Command failure, split by exit status.
#[derive(Debug, Clone, PartialEq)]
pub enum AppError {
    /// Bad flags, config values or input files (exit 2).
    Config(String),
    /// Failure while running (exit 3).
    Runtime(String),
}

impl AppError {
    pub fn exit_code(&self) -> i32 {
        match self {
            AppError::Config(_) => 2,
            AppError::Runtime(_) => 3,
        }
    }
}

impl fmt::Display for AppError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AppError::Config(m) => write!(f, "configuration error: {m}"),
            AppError::Runtime(m) => write!(f, "runtime error: {m}"),
        }
    }
}

impl std::error::Error for AppError {}

impl From<premover_core::Error> for AppError {
    fn from(e: premover_core::Error) -> Self {
        match e {
            premover_core::Error::Config(_) => AppError::Config(e.to_string()),
            other => AppError::Runtime(other.to_string()),
        }
    }
}

impl From<std::io::Error> for AppError {
    fn from(e: std::io::Error) -> Self {
        AppError::Runtime(e.to_string())
    }
}
