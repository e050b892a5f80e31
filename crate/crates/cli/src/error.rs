use std::fmt;

use semfx::SemfxError;

pub const EXIT_FAILURE: i32 = 1;
/// Bad flags or unknown scenario; clap also exits with 2.
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_PARSE: i32 = 3;
pub const EXIT_CONVERGENCE: i32 = 4;
pub const EXIT_UNSUPPORTED: i32 = 5;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    /// Unreadable or malformed input data.
    Parse(String),
    Model(SemfxError),
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Parse(_) => EXIT_PARSE,
            CliError::Io(_) => EXIT_FAILURE,
            CliError::Model(e) => match e {
                SemfxError::NonConvergence { .. }
                | SemfxError::Divergence { .. }
                | SemfxError::SingularHessian
                | SemfxError::SingularInformation(_)
                | SemfxError::Collapse
                | SemfxError::TooManyFailures { .. } => EXIT_CONVERGENCE,
                SemfxError::Unsupported(_) => EXIT_UNSUPPORTED,
                SemfxError::InvalidInput(_) | SemfxError::OutOfDomain { .. } | SemfxError::DegenerateKnots { .. } => {
                    EXIT_PARSE
                }
                SemfxError::Config(_) | SemfxError::UnsupportedOrder(_) => EXIT_USAGE,
                SemfxError::Numeric { .. }
                | SemfxError::IllConditionedQuantile { .. }
                | SemfxError::NegativeVariance(_) => EXIT_FAILURE,
            },
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage: {m}"),
            CliError::Parse(m) => write!(f, "input: {m}"),
            CliError::Model(e) => write!(f, "{e}"),
            CliError::Io(m) => write!(f, "io: {m}"),
        }
    }
}

impl From<SemfxError> for CliError {
    fn from(e: SemfxError) -> Self {
        CliError::Model(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

pub type CliResult<T> = Result<T, CliError>;
