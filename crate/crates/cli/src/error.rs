use std::path::{Path, PathBuf};

use semcommit_core::bench::BenchError;
use semcommit_core::{EngineError, GatewayError, StoreError};
use thiserror::Error;

pub const EXIT_OK: u8 = 0;
pub const EXIT_USAGE: u8 = 1;
pub const EXIT_IO: u8 = 2;
/// `check` found at least one direct conflict.
pub const EXIT_CONFLICTS: u8 = 3;
pub const EXIT_PROVIDER: u8 = 4;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{0}")]
    Format(String),
    #[error("{0}")]
    Provider(String),
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Io { .. } | CliError::Format(_) => EXIT_IO,
            CliError::Provider(_) => EXIT_PROVIDER,
        }
    }
}

impl From<StoreError> for CliError {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::Format { .. } | StoreError::DuplicateId(_) => CliError::Format(e.to_string()),
            _ => CliError::Usage(e.to_string()),
        }
    }
}

impl From<GatewayError> for CliError {
    fn from(e: GatewayError) -> Self {
        CliError::Provider(e.to_string())
    }
}

impl From<EngineError> for CliError {
    fn from(e: EngineError) -> Self {
        match e {
            EngineError::Store(s) => s.into(),
            EngineError::Gateway(g) => g.into(),
            EngineError::InvalidRequest(_) | EngineError::NotFlagged(_) => CliError::Usage(e.to_string()),
        }
    }
}

impl From<BenchError> for CliError {
    fn from(e: BenchError) -> Self {
        match e {
            BenchError::Config(_) => CliError::Usage(e.to_string()),
            _ => CliError::Format(e.to_string()),
        }
    }
}
