use thiserror::Error;

/// Errors produced anywhere in the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid schema: {0}")]
    Schema(String),

    #[error("{0}")]
    Domain(String),

    #[error("rule syntax error at position {pos}: {msg}")]
    RuleSyntax { pos: usize, msg: String },

    #[error("unknown concept `{0}`")]
    UnknownConcept(String),

    #[error("value {value} out of range for concept `{concept}` (expected 1..={cardinality})")]
    ValueOutOfRange {
        concept: String,
        value: i64,
        cardinality: u16,
    },

    #[error("rule inconsistent with data: {0}")]
    RuleInconsistent(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("not enough data: {0}")]
    InsufficientData(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("malformed {what}: {msg}")]
    Format { what: String, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn format(what: impl Into<String>, msg: impl ToString) -> Self {
        Error::Format {
            what: what.into(),
            msg: msg.to_string(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
