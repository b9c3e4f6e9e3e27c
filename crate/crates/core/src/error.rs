use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("token id {id} is out of range for vocabulary of size {vocab}")]
    TokenOutOfRange { id: u32, vocab: usize },

    #[error("sequence of {len} tokens exceeds backend max_len {max_len}")]
    SequenceTooLong { len: usize, max_len: usize },

    #[error("input token sequence is empty")]
    EmptyInput,

    #[error("remote backend unavailable: {0}")]
    RemoteUnavailable(String),

    #[error("remote backend returned a malformed response: {0}")]
    RemoteProtocol(String),

    #[error("enumerating {vocab}^{depth} prefixes exceeds the limit of {limit}")]
    EnumerationTooLarge {
        vocab: usize,
        depth: usize,
        limit: u64,
    },

    #[error("eta {eta} requires {eta} positions but the matrix has {positions}")]
    EtaExceedsMatrix { eta: usize, positions: usize },

    #[error("template references {{{0}}} but the sample has no value for it")]
    MissingSlotValue(String),

    #[error("template contains unknown slot {{{0}}}")]
    UnknownSlot(String),

    #[error("invalid vocabulary: {0}")]
    InvalidVocab(String),

    #[error("invalid label spec: {0}")]
    InvalidLabelSpec(String),

    #[error("invalid language-model table: {0}")]
    InvalidTable(String),

    #[error("invalid policy: {0}")]
    InvalidPolicy(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("line {line}: malformed dataset record: {reason}")]
    MalformedLine { line: usize, reason: String },

    #[error("line {line}: label {label:?} is not a class of the label spec")]
    UnknownLabel { line: usize, label: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
