use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// A configuration value violates its documented constraint.
    #[error("invalid config: {0}")]
    Config(String),

    /// A stage request the controller is not willing to honour. Callers are
    /// expected to consult `legal_actions` first, so hitting this is a
    /// programming error in the driving loop.
    #[error("rejected stage request: {0}")]
    RejectedRequest(String),

    /// Window bounds that do not fall on simulation step boundaries.
    #[error("window bounds not aligned to step grid: {0}")]
    Alignment(String),

    /// Internal simulator invariant broke. Always a bug, never expected.
    #[error("simulator invariant violated: {0}")]
    InvariantViolation(String),

    /// A tensor dimension did not match the network topology.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// Non-finite value where a finite one is required.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// Malformed or incompatible checkpoint file.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    /// Malformed trace file.
    #[error("trace error: {0}")]
    Trace(String),

    /// Evaluation inputs that cannot be paired or aggregated.
    #[error("report error: {0}")]
    Report(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Stable machine-readable tag for one variant, used in CLI error lines.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Config(_) => "config",
            Error::RejectedRequest(_) => "rejected-request",
            Error::Alignment(_) => "alignment",
            Error::InvariantViolation(_) => "invariant",
            Error::Shape(_) => "shape",
            Error::Numeric(_) => "numeric",
            Error::Checkpoint(_) => "checkpoint",
            Error::Trace(_) => "trace",
            Error::Report(_) => "report",
            Error::Io(_) => "io",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
