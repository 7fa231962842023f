use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("document {doc_id}: invalid {field}: {message}")]
    Validation {
        doc_id: String,
        field: String,
        message: String,
    },

    #[error("pronoun {pronoun_id} does not belong to document {doc_id}")]
    PronounNotInDocument { doc_id: String, pronoun_id: String },

    #[error("unknown relation {0:?} (expected nsubj or dobj)")]
    UnknownRelation(String),

    #[error("invalid count {0}: counts must be positive")]
    InvalidCount(i64),

    #[error("unsupported pronoun {0:?}")]
    UnsupportedPronoun(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("invalid dropout rate {0}: must lie in [0, 1)")]
    InvalidDropout(f64),

    #[error("duplicate parameter name {0:?}")]
    DuplicateParameter(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("checkpoint array {name}: expected shape {expected:?}, found {found:?}")]
    ShapeMismatch {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("prediction for unknown pronoun {doc_id}/{pronoun_id}")]
    UnknownPrediction { doc_id: String, pronoun_id: String },

    #[error("training corpus has no pronoun with a correct reference in its candidate window")]
    NoTrainablePronouns,

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn validation(
        doc_id: &str,
        field: impl Into<String>,
        message: impl Into<String>,
    ) -> Self {
        Error::Validation {
            doc_id: doc_id.to_string(),
            field: field.into(),
            message: message.into(),
        }
    }
}
