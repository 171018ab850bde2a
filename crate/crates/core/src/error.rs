use thiserror::Error;

/// Errors raised across the toolkit.
///
/// The variants map onto CLI exit codes: `Config`/`Parse` exit with 2,
/// `ToleranceNotMet`/`TruncationTooShort` with 3, everything else with 1.
#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("capability error: {0}")]
    Capability(String),

    #[error(
        "kernel truncation too short: tail bound {bound:.3e} exceeds tolerance {tolerance:.3e}; \
         a horizon of at least {required:.3e} is needed"
    )]
    TruncationTooShort {
        bound: f64,
        tolerance: f64,
        required: f64,
    },

    #[error("tolerance not met: {0}")]
    ToleranceNotMet(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code of the command-line tool.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Parse { .. } => 2,
            Error::ToleranceNotMet(_) | Error::TruncationTooShort { .. } => 3,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Domain(msg.into()))
}
