//! Crate-wide error type.
//!
//! Errors are grouped into a small set of categories so the CLI can map them
//! to distinct exit codes. Invalid placements are *not* errors: the simulator
//! reports them as verdicts so the trainer can turn them into rewards.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Tensor shapes do not line up for the requested operation.
    #[error("dimension error: {0}")]
    Dimension(String),

    /// Input value outside the mathematical domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A caller broke an API contract (wrong lengths, non-scalar loss, ...).
    #[error("contract error: {0}")]
    Contract(String),

    /// Malformed or unsupported serialized input.
    #[error("parse error: {0}")]
    Parse(String),

    /// Invalid generator or method parameters.
    #[error("parameter error: {0}")]
    Parameter(String),

    /// The graph contains a cycle where a DAG is required.
    #[error("cycle error: {0}")]
    Cycle(String),

    /// Training aborted (NaN gradients, diverged loss).
    #[error("training error: {0}")]
    Training(String),

    /// Checkpoint or file format version mismatch.
    #[error("version error: {0}")]
    Version(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code for the CLI. 0 is success, 2 is reserved for usage
    /// errors (clap), and each remaining category gets its own code.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Parse(_) | Error::Version(_) => 3,
            Error::Dimension(_) | Error::Domain(_) | Error::Contract(_) | Error::Cycle(_) => 4,
            Error::Training(_) => 5,
            Error::Parameter(_) => 2,
            Error::Io(_) => 6,
        }
    }
}
