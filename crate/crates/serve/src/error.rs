use thiserror::Error;

#[derive(Debug, Error)]
pub enum ServeError {
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("unknown user {0:?} and no inline profile")]
    UnknownUser(String),
    #[error("artifacts rejected: {0}")]
    Rejected(String),
    #[error(transparent)]
    Core(#[from] sidgen_core::Error),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}
