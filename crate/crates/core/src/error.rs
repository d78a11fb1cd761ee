use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("shape mismatch: expected {expected}, got {actual}")]
    Shape { expected: String, actual: String },

    #[error("reference point {index} at {location} lies outside the floor bounds")]
    OutsideBounds { index: usize, location: String },

    #[error("duplicate reference point index {0}")]
    DuplicateRp(usize),

    #[error("empty database")]
    EmptyDatabase,

    #[error("image database entry {index} at {location} lies outside every area")]
    EntryOutsideAreas { index: usize, location: String },

    #[error("unknown area index {index} (partition has {n_areas} areas)")]
    UnknownArea { index: usize, n_areas: usize },

    #[error("{stage} diverged at {at}: non-finite loss")]
    Divergence { stage: &'static str, at: String },

    #[error("unsupported schema version {found} (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("malformed line {line}: {reason}")]
    MalformedLine { line: usize, reason: String },

    #[error("checksum mismatch: header says {expected}, body hashes to {actual}")]
    ChecksumMismatch { expected: String, actual: String },

    #[error("wrong record kind: expected {expected}, found {found}")]
    KindMismatch { expected: String, found: String },

    #[error("config hash mismatch: {left} vs {right}")]
    HashMismatch { left: String, right: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }

    pub(crate) fn shape(expected: impl ToString, actual: impl ToString) -> Self {
        Error::Shape {
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
