use std::path::{Path, PathBuf};

use serde_json::{json, Value};
use thiserror::Error;

use crate::config::ConfigError;

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 1;
pub const EXIT_IO: i32 = 2;
pub const EXIT_USAGE: i32 = 64;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{message}")]
    Validation { message: String, details: Value },
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{message}")]
    Endpoint { message: String, details: Value },
}

impl CliError {
    pub fn io(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
        move |source| CliError::Io { path: path.to_path_buf(), source }
    }

    pub fn validation(message: impl Into<String>, details: Value) -> Self {
        CliError::Validation { message: message.into(), details }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Config(_) => EXIT_USAGE,
            CliError::Validation { .. } => EXIT_VALIDATION,
            CliError::Io { .. } | CliError::Endpoint { .. } => EXIT_IO,
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::Config(_) => "config",
            CliError::Validation { .. } => "validation",
            CliError::Io { .. } => "io",
            CliError::Endpoint { .. } => "endpoint",
        }
    }

    /// The structured report written to stderr.
    pub fn report(&self) -> Value {
        let mut v = json!({
            "error": self.kind(),
            "exit_code": self.exit_code(),
            "message": self.to_string(),
        });
        match self {
            CliError::Validation { details, .. } | CliError::Endpoint { details, .. } => {
                v["details"] = details.clone();
            }
            CliError::Io { path, .. } => v["path"] = json!(path.display().to_string()),
            _ => {}
        }
        v
    }
}
