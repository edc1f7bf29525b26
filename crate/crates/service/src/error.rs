use mopref_core::Error as CoreError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("session {0} not found")]
    NotFound(String),
    #[error("{0}")]
    Conflict(String),
    #[error("{0}")]
    PreconditionFailed(String),
    #[error("{0}")]
    BadRequest(String),
    /// No admissible query is left; the caller should finalize.
    #[error("{0}")]
    Exhausted(String),
    #[error("corrupt session log: {0}")]
    CorruptLog(String),
    #[error(transparent)]
    Core(CoreError),
}

pub type ServiceResult<T> = std::result::Result<T, ServiceError>;

impl From<CoreError> for ServiceError {
    fn from(e: CoreError) -> Self {
        match e {
            CoreError::QueryExhausted(m) => ServiceError::Exhausted(m),
            CoreError::InvalidArgument(_) | CoreError::ArityMismatch { .. } | CoreError::MalformedWeights(_) => {
                ServiceError::BadRequest(e.to_string())
            }
            other => ServiceError::Core(other),
        }
    }
}

impl From<std::io::Error> for ServiceError {
    fn from(e: std::io::Error) -> Self {
        ServiceError::Core(CoreError::Io(e))
    }
}

impl From<serde_json::Error> for ServiceError {
    fn from(e: serde_json::Error) -> Self {
        ServiceError::Core(CoreError::Json(e))
    }
}
