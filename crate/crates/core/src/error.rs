use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("missing file: {0}")]
    MissingFile(PathBuf),

    #[error("malformed line {line} in {path}: {reason}")]
    MalformedLine {
        path: PathBuf,
        line: usize,
        reason: String,
    },

    #[error("empty split: {0}")]
    EmptySplit(PathBuf),

    #[error("unknown {kind} name {name:?} in {path}")]
    UnknownName {
        kind: &'static str,
        name: String,
        path: PathBuf,
    },

    #[error("reciprocals already present")]
    ReciprocalsPresent,

    #[error("{kind} id {id} out of range (limit {limit})")]
    IdOutOfRange {
        kind: &'static str,
        id: usize,
        limit: usize,
    },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("length mismatch: expected {expected}, found {found}")]
    LengthMismatch { expected: usize, found: usize },

    #[error("empty batch")]
    EmptyBatch,

    #[error("empty evaluation set")]
    EmptyEvaluation,

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("non-finite parameter in table {table} after update at epoch {epoch}")]
    NonFiniteParameter { table: &'static str, epoch: usize },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("config error: {0}")]
    Config(String),
}

impl Error {
    /// Short stable identifier of the variant.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::MissingFile(_) => "missing-file",
            Error::MalformedLine { .. } => "malformed-line",
            Error::EmptySplit(_) => "empty-split",
            Error::UnknownName { .. } => "unknown-name",
            Error::ReciprocalsPresent => "reciprocals-present",
            Error::IdOutOfRange { .. } => "id-out-of-range",
            Error::Contract(_) => "contract",
            Error::LengthMismatch { .. } => "length-mismatch",
            Error::EmptyBatch => "empty-batch",
            Error::EmptyEvaluation => "empty-evaluation",
            Error::NonFinite(_) => "non-finite",
            Error::NonFiniteParameter { .. } => "non-finite-parameter",
            Error::Checkpoint(_) => "checkpoint",
            Error::Config(_) => "config",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
