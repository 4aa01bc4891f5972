use std::fmt;
use std::path::Path;

/// A CLI failure: a stable code plus human-readable text.
#[derive(Debug, Clone, PartialEq)]
pub struct CliError {
    pub code: &'static str,
    pub message: String,
}

pub type CliResult<T> = Result<T, CliError>;

impl CliError {
    pub fn new(code: &'static str, message: impl Into<String>) -> Self {
        CliError {
            code,
            message: message.into(),
        }
    }

    pub fn io(path: &Path, err: std::io::Error) -> Self {
        CliError::new("io", format!("{}: {err}", path.display()))
    }

    /// Prefixes the message with a location such as `file:line`.
    pub fn at(mut self, location: impl fmt::Display) -> Self {
        self.message = format!("{location}: {}", self.message);
        self
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        // Single line: embedded newlines would break machine parsing.
        write!(f, "error[{}]: {}", self.code, self.message.replace('\n', "; "))
    }
}

impl std::error::Error for CliError {}

impl From<annoflow_core::Error> for CliError {
    fn from(e: annoflow_core::Error) -> Self {
        CliError::new(e.code(), e.to_string())
    }
}
