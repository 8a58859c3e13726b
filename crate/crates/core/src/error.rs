use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("length mismatch for {what}: expected {expected}, found {found}")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("non-finite value at index {index}")]
    NonFinite { index: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("history buffer expects round {expected}, got {found}")]
    NonConsecutiveRound { expected: u64, found: u64 },

    #[error("round {0} is not retained in the history buffer")]
    RoundNotRetained(u64),

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("config `{key}`: {message}")]
    Config { key: String, message: String },

    #[error("training diverged at round {round}: non-finite global model")]
    Diverged { round: u64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            message: message.into(),
        }
    }
}
