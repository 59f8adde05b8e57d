use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A value violates one or more structural invariants.
    #[error("validation failed: {}", .0.join("; "))]
    Validation(Vec<String>),

    /// The caller invoked an operation outside its contract.
    #[error("usage error: {0}")]
    Usage(String),

    #[error("generation failed after {attempts} attempts: {reason}")]
    Generation { attempts: usize, reason: String },

    #[error("resource limit exceeded: {what} needs {needed}, cap is {cap}")]
    Resource {
        what: &'static str,
        needed: usize,
        cap: usize,
    },

    /// Logged data references something that does not exist.
    #[error("data error: {0}")]
    Data(String),

    /// Out-of-order or out-of-phase session operation.
    #[error("state error: {0}")]
    State(String),

    #[error("not found: {0}")]
    NotFound(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::Validation(vec![msg.into()])
    }

    pub(crate) fn usage(msg: impl Into<String>) -> Self {
        Error::Usage(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
