use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A coordinate, point or query falls outside the configured grid.
    #[error("domain error: {0}")]
    Domain(String),

    /// A BMP or tree does not have a legal shape.
    #[error("structural error: {0}")]
    Structure(String),

    /// A level action assigns a bit that is not available on a node's path.
    #[error("illegal action on node {node}: dimension {dim} {reason}")]
    Action { node: u32, dim: usize, reason: String },

    #[error("precondition violated: {0}")]
    Precondition(String),

    /// A generator, workload or training setting is unusable.
    #[error("invalid setting: {0}")]
    Config(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    /// The index returned a result set that differs from the brute-force oracle.
    #[error("recall violation: {0}")]
    Recall(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn parse(line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            line,
            message: message.into(),
        }
    }
}
