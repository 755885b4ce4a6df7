use std::fmt;
use std::path::Path;

/// Failure of one invocation, carrying the exit code class.
#[derive(Debug)]
pub enum CliError {
    /// Bad flags or parameter values. Exit 1.
    Usage(String),
    /// Unreadable, unwritable or malformed files. Exit 2.
    Io(String),
    /// Non-finite values during computation. Exit 3.
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Io(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }

    pub fn io(path: &Path, err: impl fmt::Display) -> Self {
        CliError::Io(format!("{}: {err}", path.display()))
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Io(m) => write!(f, "i/o error: {m}"),
            CliError::Numerical(m) => write!(f, "numerical error: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<blobloss::Error> for CliError {
    fn from(e: blobloss::Error) -> Self {
        if e.is_numerical() {
            CliError::Numerical(e.to_string())
        } else if matches!(e, blobloss::Error::InvalidConfig(_)) {
            CliError::Usage(e.to_string())
        } else {
            CliError::Io(e.to_string())
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
