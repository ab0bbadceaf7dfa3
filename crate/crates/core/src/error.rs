use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("line {line}: {message}")]
    Record { line: usize, message: String },

    #[error("invalid mention: {0}")]
    InvalidMention(String),

    #[error("unknown type `{0}` (not in the training ontology)")]
    UnknownType(String),

    #[error("invalid type path `{0}`")]
    InvalidTypePath(String),

    #[error("{count} mention(s) reference documents missing from the store; first ids: {ids:?}")]
    DanglingDocuments { count: usize, ids: Vec<String> },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("vector file line {line}: {message}")]
    VectorFormat { line: usize, message: String },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("checkpoint checksum mismatch (file truncated or corrupted)")]
    Checksum,

    #[error("incompatible ontology: checkpoint hash {expected}, got {found}")]
    OntologyMismatch { expected: String, found: String },

    #[error("invalid configuration: {0}")]
    Config(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
