use thiserror::Error;

/// Errors raised anywhere in the engine.
///
/// Variants map one-to-one onto the error classes the CLI turns into
/// distinct exit codes, see [`Error::exit_code`].
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("house generation failed: {0}")]
    GenerationFailure(String),
    #[error("episode setup failed: {0}")]
    EpisodeSetup(String),
    #[error("invalid state: {0}")]
    InvalidState(String),
    #[error("cells are not connected: {0}")]
    Unreachable(String),
    #[error("training diverged: {0}")]
    TrainingFailure(String),
    #[error("inference failed: {0}")]
    InferenceFailure(String),
    #[error("no admissible query left: {0}")]
    QueryExhausted(String),
    #[error("constraint conflicts with the feasible region: {0}")]
    ConstraintConflict(String),
    #[error("could not parse weights: {0}")]
    ParseFailure(String),
    #[error("expected {expected} weights, found {found}")]
    ArityMismatch { expected: usize, found: usize },
    #[error("malformed weights: {0}")]
    MalformedWeights(String),
    #[error("provider unavailable: {0}")]
    ProviderUnavailable(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    /// Process exit code for this error class. 2 is reserved for usage errors.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidArgument(_) | Error::ArityMismatch { .. } | Error::MalformedWeights(_) => 3,
            Error::Io(_) | Error::Json(_) | Error::Csv(_) => 4,
            Error::GenerationFailure(_) | Error::EpisodeSetup(_) | Error::Unreachable(_) => 5,
            Error::InvalidState(_) => 6,
            Error::TrainingFailure(_) => 7,
            Error::InferenceFailure(_) | Error::QueryExhausted(_) | Error::ConstraintConflict(_) => 8,
            Error::ParseFailure(_) => 9,
            Error::ProviderUnavailable(_) => 10,
        }
    }
}
