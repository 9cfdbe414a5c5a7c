use thiserror::Error;

/// Errors produced by the core numeric and graph layers.
#[derive(Debug, Error)]
pub enum CoreError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("operation requires a nonempty tensor")]
    EmptyTensor,
    #[error("domain error: {0}")]
    Domain(String),
    #[error("invalid graph: {0}")]
    Graph(String),
    #[error("no gradient recorded for parameterized layer {0}")]
    MissingGradient(usize),
    #[error("malformed tensor dump: {0}")]
    BadDump(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, CoreError>;
