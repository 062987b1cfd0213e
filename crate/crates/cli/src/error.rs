use std::path::PathBuf;

use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] sef_core::Error),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Usage(String),
    #[error("invalid synthetic config: {0}")]
    Config(String),
    #[error("election name `{0}` appears more than once")]
    DuplicateElection(String),
}

macro_rules! from_module_error {
    ($($t:ty),*) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::Core(e.into())
            }
        }
    )*};
}

from_module_error!(
    sef_core::ingest::IngestError,
    sef_core::sef::SefError,
    sef_core::rigging::RiggingError,
    sef_core::diagnostics::DiagnosticsError
);

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn code(&self) -> &'static str {
        match self {
            CliError::Core(e) => e.code(),
            CliError::Io { .. } => "IO_ERROR",
            CliError::Usage(_) => "INVALID_ARGUMENTS",
            CliError::Config(_) => "INVALID_CONFIG",
            CliError::DuplicateElection(_) => "DUPLICATE_ELECTION",
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            _ => 1,
        }
    }
}

/// The JSON document printed to stderr on failure.
#[derive(Serialize)]
pub struct ErrorReport<'a> {
    pub error: ErrorBody<'a>,
}

#[derive(Serialize)]
pub struct ErrorBody<'a> {
    pub code: &'a str,
    pub message: String,
}

impl<'a> ErrorReport<'a> {
    pub fn new(code: &'a str, message: String) -> Self {
        ErrorReport {
            error: ErrorBody { code, message },
        }
    }
}
