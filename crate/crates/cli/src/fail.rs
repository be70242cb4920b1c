use std::fmt;
use std::path::Path;

use serde_json::json;
use triage_core::Error;

pub const EXIT_RUNTIME: u8 = 1;
pub const EXIT_USAGE: u8 = 2;

/// A command failure and the exit code it maps to.
#[derive(Debug)]
pub struct Failure {
    pub exit_code: u8,
    pub message: String,
}

pub type CmdResult<T> = Result<T, Failure>;

impl Failure {
    pub fn usage(message: impl Into<String>) -> Self {
        Failure {
            exit_code: EXIT_USAGE,
            message: message.into(),
        }
    }

    pub fn runtime(message: impl Into<String>) -> Self {
        Failure {
            exit_code: EXIT_RUNTIME,
            message: message.into(),
        }
    }

    /// A problem with a file the user pointed us at.
    pub fn input(path: &Path, e: impl fmt::Display) -> Self {
        Failure::usage(format!("{}: {e}", path.display()))
    }

    pub fn output(path: &Path, e: impl fmt::Display) -> Self {
        Failure::runtime(format!("{}: {e}", path.display()))
    }

    pub fn to_json(&self) -> String {
        let code = if self.exit_code == EXIT_USAGE { "usage" } else { "runtime" };
        json!({ "error": { "code": code, "exit_code": self.exit_code, "message": self.message } }).to_string()
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let usage = e.is_validation()
            || matches!(
                e,
                Error::Fit(_) | Error::SchemaVersion { .. } | Error::Integrity(_) | Error::NoModel
            );
        Failure {
            exit_code: if usage { EXIT_USAGE } else { EXIT_RUNTIME },
            message: e.to_string(),
        }
    }
}
