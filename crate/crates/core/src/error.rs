use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = DasError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum DasError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("duplicate document id {id:?} on lines {first_line} and {second_line}")]
    DuplicateId {
        id: String,
        first_line: usize,
        second_line: usize,
    },

    #[error("line {line}: document {id:?} has empty text")]
    EmptyText { line: usize, id: String },

    #[error("corpus is empty")]
    EmptyCorpus,

    #[error("candidate universe is empty after removing {excluded} excluded id(s)")]
    EmptyUniverse { excluded: usize },

    #[error("unknown document id {0:?}")]
    UnknownId(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("cannot compute cosine similarity of an all-zero vector")]
    ZeroVector,

    #[error("embedding for {0:?} contains non-finite values")]
    NonFinite(String),

    #[error("provider error: {0}")]
    Provider(String),

    #[error(
        "prompt of {rendered} chars exceeds context budget of {budget} chars \
         (target {target_chars} chars, {group} candidates totalling {candidate_chars} chars)"
    )]
    ContextBudget {
        rendered: usize,
        budget: usize,
        target_chars: usize,
        group: usize,
        candidate_chars: usize,
    },

    #[error("group of {size} is outside the allowed range {min}..={max}")]
    GroupSize { size: usize, min: usize, max: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid arguments: {0}")]
    Domain(String),

    #[error("document {0:?} has no author label")]
    MissingLabel(String),

    #[error("no query results to evaluate")]
    EmptyResults,

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl DasError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        DasError::Io {
            path: path.into(),
            source,
        }
    }

    /// Errors raised by an embedding or LLM backend, as opposed to bad input data.
    pub fn is_provider(&self) -> bool {
        matches!(self, DasError::Provider(_))
    }
}
