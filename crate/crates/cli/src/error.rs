use std::fmt;

use benchsim_core::Error;

/// Exit 2: the request cannot be run as given.
pub const EXIT_CONFIG: i32 = 2;
/// Exit 3: the run failed numerically or a diagnostic tripped.
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Engine(Error),
    /// A validation suite ran and reported failures.
    Failed(String),
}

impl CliError {
    pub fn config(msg: impl Into<String>) -> Self {
        Self::Config(msg.into())
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) => EXIT_CONFIG,
            Self::Failed(_) => EXIT_NUMERICAL,
            Self::Engine(e) => match e {
                Error::Domain(_)
                | Error::InvalidParameter(_)
                | Error::NotPositiveDefinite(_)
                | Error::NotPositiveSemidefinite(_)
                | Error::GammaTwo
                | Error::Grid(_)
                | Error::Existence(_)
                | Error::Json(_) => EXIT_CONFIG,
                Error::NoConvergence { .. }
                | Error::Evaluation { .. }
                | Error::InversionDiagnostic { .. }
                | Error::Coverage { .. }
                | Error::MlmcNotConverged { .. }
                | Error::Io(_) => EXIT_NUMERICAL,
            },
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Config(m) => write!(f, "configuration error: {m}"),
            Self::Engine(e) => write!(f, "{e}"),
            Self::Failed(m) => write!(f, "{m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        Self::Engine(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::Engine(Error::Io(e))
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        Self::Engine(Error::Io(std::io::Error::other(e)))
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        Self::Engine(Error::Io(std::io::Error::other(e)))
    }
}
