use std::fmt;

use tvflow_core::Error;

/// Failure classes, each with its own process exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Kind {
    Config,
    Io,
    NotConverged,
    NonFinite,
}

#[derive(Debug)]
pub struct CliError {
    pub kind: Kind,
    pub message: String,
}

impl CliError {
    pub fn config(msg: impl Into<String>) -> Self {
        Self { kind: Kind::Config, message: msg.into() }
    }

    pub fn io(msg: impl Into<String>) -> Self {
        Self { kind: Kind::Io, message: msg.into() }
    }

    pub fn not_converged(msg: impl Into<String>) -> Self {
        Self { kind: Kind::NotConverged, message: msg.into() }
    }

    pub fn code(&self) -> i32 {
        match self.kind {
            Kind::Config => 2,
            Kind::Io => 3,
            Kind::NotConverged => 4,
            Kind::NonFinite => 5,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let kind = match e {
            Error::InvalidInput(_) | Error::InvalidParameter(_) => Kind::Config,
            Error::Io(_) | Error::Format(_) => Kind::Io,
            Error::Diverged { .. } => Kind::NonFinite,
        };
        Self { kind, message: e.to_string() }
    }
}

pub type CliResult<T> = Result<T, CliError>;
