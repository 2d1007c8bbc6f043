use thiserror::Error;

/// Errors raised anywhere in the estimation pipeline.
#[derive(Debug, Error)]
pub enum FestaError {
    /// A scoring function received arguments outside its mathematical domain.
    #[error("domain error: {0}")]
    Domain(String),

    /// Input data (image, audio, manifest payload) could not be decoded.
    #[error("input error: {0}")]
    Input(String),

    /// A configuration value is missing or out of its documented range.
    #[error("config error: {0}")]
    Config(String),

    /// An operation was invoked without its required preconditions.
    #[error("precondition failed: {0}")]
    Precondition(String),

    #[error("not complementable: {0}")]
    NotComplementable(String),

    #[error("instance {id} unusable: {reason}")]
    InstanceUnusable { id: String, reason: String },

    #[error("transport error: {0}")]
    Transport(String),

    #[error("upstream returned HTTP {status}: {body}")]
    Upstream { status: u16, body: String },

    /// Schema violation in a JSONL artifact. `line` is 1-based.
    #[error("validation error at line {line}: {message}")]
    Validation { line: usize, message: String },

    #[error("usage error: {0}")]
    Usage(String),

    #[error("upstream failure rate {rate:.3} exceeds threshold {threshold:.3} ({failures}/{total} requests)")]
    FailureThreshold {
        failures: usize,
        total: usize,
        rate: f64,
        threshold: f64,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl FestaError {
    /// Process exit code for the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            FestaError::Usage(_) | FestaError::Config(_) => 1,
            FestaError::FailureThreshold { .. } => 3,
            _ => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, FestaError>;
