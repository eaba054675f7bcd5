use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("unsupported mesh format: {0}")]
    UnsupportedFormat(String),
    #[error("malformed {format} file: {message}")]
    Parse { format: &'static str, message: String },
    #[error("face {face} references vertex {index} but the mesh has {vertex_count} vertices")]
    FaceIndexOutOfRange {
        face: usize,
        index: usize,
        vertex_count: usize,
    },
    #[error("degenerate mesh: {0}")]
    DegenerateMesh(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("non-finite input: {0}")]
    NonFinite(String),
    #[error("length mismatch: expected {expected}, got {actual} ({what})")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error("field archive error: {0}")]
    Archive(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("embedding backend error: {0}")]
    Backend(String),
    #[error("zero-norm vector in cosine similarity")]
    ZeroNorm,
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("optimization diverged at step {step}: {message}")]
    Diverged { step: usize, message: String },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(format: &'static str, message: impl Into<String>) -> Self {
        Error::Parse {
            format,
            message: message.into(),
        }
    }
}
