use std::fmt;
use std::process::ExitCode;

/// Process exit statuses.
pub mod exit {
    pub const OK: u8 = 0;
    pub const VERIFY_FAILED: u8 = 1;
    pub const CONFIG: u8 = 2;
    pub const DIVERGED: u8 = 3;
    pub const IO: u8 = 4;
}

#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn config(message: impl Into<String>) -> Self {
        Self { code: exit::CONFIG, message: message.into() }
    }

    pub fn io(message: impl Into<String>) -> Self {
        Self { code: exit::IO, message: message.into() }
    }

    pub fn verify(message: impl Into<String>) -> Self {
        Self { code: exit::VERIFY_FAILED, message: message.into() }
    }

    pub fn exit_code(&self) -> ExitCode {
        ExitCode::from(self.code)
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

impl From<prtrade::Error> for CliError {
    fn from(e: prtrade::Error) -> Self {
        use prtrade::Error::*;
        let code = match e {
            Domain(_) | Budget { .. } => exit::CONFIG,
            NonFinite { .. } | Diverged { .. } => exit::DIVERGED,
            State(_) | Corrupt(_) | Io(_) => exit::IO,
        };
        Self { code, message: e.to_string() }
    }
}
