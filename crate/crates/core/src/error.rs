use thiserror::Error;

/// Errors raised anywhere in the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("template topology mismatch: {0}")]
    TopologyMismatch(String),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("length mismatch for {what}: expected {expected}, got {got}")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("no load: every pressure sensor reads zero")]
    NoLoad,
    #[error("invalid body weight {0}; must be positive and finite")]
    InvalidWeight(f64),
    #[error("sensor index {index} out of range (insole has {len} sensors)")]
    SensorIndex { index: usize, len: usize },
    #[error("invalid pose prior: {0}")]
    InvalidPrior(String),
    #[error("malformed {kind}: {message}")]
    Format { kind: &'static str, message: String },
    #[error("missing input: {0}")]
    Missing(String),
    #[error("optimization diverged: {0}")]
    Diverged(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn format(kind: &'static str, message: impl Into<String>) -> Self {
        Error::Format {
            kind,
            message: message.into(),
        }
    }

    /// True for errors caused by bad user input rather than runtime failure.
    pub fn is_validation(&self) -> bool {
        !matches!(self, Error::Io(_) | Error::Diverged(_))
    }
}
