//! One error type for the whole binary, mapped to exit codes: user and
//! configuration mistakes exit 2, computation and I/O failures exit 1.

use std::path::PathBuf;

use fiber_piano::fiber::FiberError;
use fiber_piano::io::IoError;
use fiber_piano::metrics::MetricsError;
use fiber_piano::modes::ModeError;
use fiber_piano::optimize::OptimizeError;
use fiber_piano::quantum::QuantumError;
use thiserror::Error;

use crate::config::ConfigError;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{path} already exists; pass --force to overwrite")]
    RefuseOverwrite { path: PathBuf },
    #[error("cannot configure {requested} worker threads: {message}")]
    Workers { requested: usize, message: String },
    #[error(transparent)]
    Mode(#[from] ModeError),
    #[error(transparent)]
    Fiber(#[from] FiberError),
    #[error(transparent)]
    Quantum(#[from] QuantumError),
    #[error(transparent)]
    Optimize(#[from] OptimizeError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Output(#[from] IoError),
    #[error("i/o failure: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    /// Process exit code: 2 for mistakes the user can fix in the invocation
    /// or the config file, 1 for runtime failures.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) | CliError::RefuseOverwrite { .. } | CliError::Workers { .. } => 2,
            _ => 1,
        }
    }
}
