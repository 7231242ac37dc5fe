//! Command implementations behind the `orthokernel` binary.
//!
//! Every command returns an exit status following one contract: 0 for
//! success, 1 when a verification fails, 2 for bad input and 3 for a
//! configuration that has no orthogonal kernel.

pub mod bench;
pub mod commands;
pub mod config;

use std::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Pass = 0,
    VerifyFailed = 1,
    BadInput = 2,
    Unsupported = 3,
}

impl Status {
    pub fn code(self) -> i32 {
        self as i32
    }
}

#[derive(Debug)]
pub struct CliError {
    pub status: Status,
    pub message: String,
}

impl CliError {
    pub fn bad_input(message: impl Into<String>) -> Self {
        Self {
            status: Status::BadInput,
            message: message.into(),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

impl From<orthokernel::Error> for CliError {
    fn from(e: orthokernel::Error) -> Self {
        let status = match e {
            orthokernel::Error::Unsupported(_) => Status::Unsupported,
            _ => Status::BadInput,
        };
        Self {
            status,
            message: e.to_string(),
        }
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::bad_input(e.to_string())
    }
}

pub type CliResult<T> = Result<T, CliError>;

/// Cap rayon's worker count from `ORTHOKERNEL_THREADS` when it is set.
pub fn configure_threads() -> CliResult<()> {
    let Ok(raw) = std::env::var("ORTHOKERNEL_THREADS") else {
        return Ok(());
    };
    let n: usize = raw.trim().parse().ok().filter(|&n| n > 0).ok_or_else(|| {
        CliError::bad_input(format!(
            "ORTHOKERNEL_THREADS must be a positive integer, got {raw:?}"
        ))
    })?;
    // A second initialization (tests calling in-process) is harmless.
    let _ = rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global();
    Ok(())
}
