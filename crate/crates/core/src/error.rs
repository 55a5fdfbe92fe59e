use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Broad failure class, used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    Config,
    Numerical,
    Io,
}

impl ErrorCategory {
    pub fn exit_code(self) -> u8 {
        match self {
            ErrorCategory::Config => 2,
            ErrorCategory::Numerical => 3,
            ErrorCategory::Io => 4,
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("layer {index} has no operations (all counts are zero)")]
    InvalidLayer { index: usize },

    #[error("invalid layer {index}: {reason}")]
    LayerValue { index: usize, reason: String },

    #[error("model must contain at least one layer")]
    EmptyModel,

    #[error("unknown model {0:?}")]
    UnknownModel(String),

    #[error("split {split} outside [0, {layers}]")]
    SplitOutOfRange { split: usize, layers: usize },

    #[error("{name} = {value} outside [{min}, {max}]")]
    OutOfBounds {
        name: &'static str,
        value: f64,
        min: f64,
        max: f64,
    },

    #[error("{name} = {value} outside its domain: {reason}")]
    Domain {
        name: &'static str,
        value: f64,
        reason: &'static str,
    },

    #[error("invalid graph: {0}")]
    Graph(String),

    #[error("server {server} is unreachable from AP {ap}")]
    Unreachable { ap: u32, server: u32 },

    #[error("stale handover for user {user}: expected at AP {expected}, user is at AP {actual}")]
    StaleEvent {
        user: u32,
        expected: u32,
        actual: u32,
    },

    #[error("non-finite {term} at split {split} (B = {bandwidth}, r = {compute})")]
    Numerical {
        term: &'static str,
        split: usize,
        bandwidth: f64,
        compute: f64,
    },

    #[error("oracle check failed: {0}")]
    OracleGap(String),

    #[error("config: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::Numerical { .. } | Error::OracleGap(_) => ErrorCategory::Numerical,
            Error::Io { .. } | Error::Csv(_) => ErrorCategory::Io,
            _ => ErrorCategory::Config,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json {
            path: path.into(),
            source,
        }
    }
}
