//! Configuration, result records and the command implementations behind the
//! `ncollapse` binary.

pub mod commands;
pub mod config;
pub mod output;

use std::path::PathBuf;

use thiserror::Error;

pub use commands::{run_command, Command, CommandOptions};
pub use config::RunConfig;
pub use output::{fmt_g, ResultRecord, SCHEMA_VERSION};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {message}", path = path.display())]
    Io { path: PathBuf, message: String },

    #[error("{}{message}", path.as_ref().map(|p| format!("{}: ", p.display())).unwrap_or_default())]
    Parse { path: Option<PathBuf>, message: String },

    #[error("missing section [{0}]")]
    Missing(String),

    #[error("invalid value for '{key}': {message}")]
    Invalid { key: String, message: String },
}

impl ConfigError {
    pub(crate) fn invalid(key: &str, e: crate::Error) -> Self {
        ConfigError::Invalid { key: key.to_string(), message: e.to_string() }
    }
}

/// Process exit codes.
pub mod exit {
    pub const OK: i32 = 0;
    pub const VALIDATION: i32 = 1;
    pub const USAGE: i32 = 2;
    pub const NUMERIC: i32 = 3;
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),

    #[error("{0}")]
    Usage(String),

    #[error("numeric failure: {0}")]
    Numeric(#[from] crate::Error),

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("cannot write {path}: {source}", path = path.display())]
    Output { path: PathBuf, source: std::io::Error },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Usage(_) | CliError::Output { .. } => exit::USAGE,
            CliError::Validation(_) => exit::VALIDATION,
            // Bad arguments that slipped past config checks are still usage errors.
            CliError::Numeric(crate::Error::InvalidArgument(_)) => exit::USAGE,
            CliError::Numeric(_) => exit::NUMERIC,
        }
    }
}
