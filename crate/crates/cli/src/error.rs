use std::fmt;

use serde::Serialize;

/// Failure classes, each mapped to a process exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorKind {
    Config,
    Io,
    Aborted,
    CheckFailed,
}

impl ErrorKind {
    pub fn exit_code(self) -> u8 {
        match self {
            ErrorKind::Config => 2,
            ErrorKind::Io | ErrorKind::Aborted => 3,
            ErrorKind::CheckFailed => 4,
        }
    }
}

/// Machine-readable error record; serialized to stderr as one JSON line.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CliError {
    pub kind: ErrorKind,
    pub message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub path: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub line: Option<usize>,
}

impl CliError {
    pub fn new(kind: ErrorKind, message: impl Into<String>) -> Self {
        Self {
            kind,
            message: message.into(),
            path: None,
            line: None,
        }
    }

    pub fn config(message: impl Into<String>) -> Self {
        Self::new(ErrorKind::Config, message)
    }

    pub fn io(path: &std::path::Path, err: impl fmt::Display) -> Self {
        Self {
            path: Some(path.display().to_string()),
            ..Self::new(ErrorKind::Io, err.to_string())
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::json!({ "error": self }).to_string()
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some(p) = &self.path {
            write!(f, "{p}")?;
            if let Some(l) = self.line {
                write!(f, ":{l}")?;
            }
            write!(f, ": ")?;
        } else if let Some(l) = self.line {
            write!(f, "line {l}: ")?;
        }
        write!(f, "{}", self.message)
    }
}

impl std::error::Error for CliError {}

impl From<deepmso::Error> for CliError {
    fn from(e: deepmso::Error) -> Self {
        match e {
            deepmso::Error::Config(_) => Self::config(e.to_string()),
            _ => Self::new(ErrorKind::Aborted, e.to_string()),
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
