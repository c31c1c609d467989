use thiserror::Error;

/// Error type shared by every module in the crate.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid parameters, indices, or inputs caught by validation.
    #[error("invalid input: {0}")]
    Invalid(String),

    /// Numerical diagnostic failure (eigensolver breakdown, lost norm, ...).
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// The optimizer exhausted its budget without meeting its targets.
    /// The best-effort report is still attached.
    #[error("solver did not converge: {0}")]
    NonConverged(String),

    /// A text file (waveform, program, config) could not be parsed.
    #[error("parse error in {path} (line {line}): {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }

    pub fn numerical(msg: impl Into<String>) -> Self {
        Error::Numerical(msg.into())
    }

    /// Process exit code for the CLI: 2 validation, 3 non-convergence, 4 i/o.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Invalid(_) => 2,
            Error::Numerical(_) | Error::NonConverged(_) => 3,
            Error::Parse { .. } | Error::Io(_) => 4,
        }
    }
}
