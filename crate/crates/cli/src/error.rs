use std::fmt;

/// Exit status for a successful run.
pub const EXIT_OK: i32 = 0;
/// Bad arguments or configuration.
pub const EXIT_USAGE: i32 = 2;
/// Unreadable, malformed or incompatible data.
pub const EXIT_DATA: i32 = 3;
/// Numerical failure during training or evaluation.
pub const EXIT_NUMERIC: i32 = 4;

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_USAGE,
            message: message.into(),
        }
    }

    pub fn data(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_DATA,
            message: message.into(),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<qimb::Error> for CliError {
    fn from(e: qimb::Error) -> Self {
        let code = match &e {
            qimb::Error::InvalidConfig(_) => EXIT_USAGE,
            qimb::Error::NonFinite(_) => EXIT_NUMERIC,
            _ => EXIT_DATA,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::data(e.to_string())
    }
}
