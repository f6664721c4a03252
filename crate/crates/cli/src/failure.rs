use std::fmt;
use std::process::ExitCode;

use mahnn::Error;

/// Command failure, mapped to the process exit code.
#[derive(Debug)]
pub enum Failure {
    /// Exit 2; every problem is listed.
    Config(Vec<String>),
    /// Exit 3.
    Data(String),
    /// Exit 4.
    Verification(String),
    /// Exit 1.
    Internal(String),
}

impl Failure {
    pub fn exit_code(&self) -> ExitCode {
        ExitCode::from(match self {
            Failure::Internal(_) => 1,
            Failure::Config(_) => 2,
            Failure::Data(_) => 3,
            Failure::Verification(_) => 4,
        })
    }

    pub fn data(context: impl fmt::Display, err: impl fmt::Display) -> Self {
        Failure::Data(format!("{context}: {err}"))
    }

    pub fn io(context: impl fmt::Display, err: std::io::Error) -> Self {
        Failure::Internal(format!("{context}: {err}"))
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Config(list) => {
                writeln!(
                    f,
                    "invalid configuration ({} problem{}):",
                    list.len(),
                    if list.len() == 1 { "" } else { "s" }
                )?;
                for item in list {
                    writeln!(f, "  - {item}")?;
                }
                Ok(())
            }
            Failure::Data(msg) => write!(f, "data error: {msg}"),
            Failure::Verification(msg) => write!(f, "verification failed: {msg}"),
            Failure::Internal(msg) => write!(f, "error: {msg}"),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(list) => Failure::Config(list),
            Error::Parse { .. } | Error::Schema { .. } | Error::Checkpoint(_) => Failure::Data(e.to_string()),
            other => Failure::Internal(other.to_string()),
        }
    }
}
