use std::path::PathBuf;

use thiserror::Error;

/// Errors raised while loading configuration or running a simulation.
#[derive(Debug, Error)]
pub enum SimError {
    /// Malformed or inconsistent configuration. `field` names the offending
    /// key; the message carries line/column when the parser reports them.
    #[error("config error in {source_name}: {field}: {message}")]
    Config {
        source_name: String,
        field: String,
        message: String,
    },

    /// A run violated one of the model's internal invariants.
    #[error("invariant violation: {0}")]
    Invariant(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl SimError {
    pub fn config(source_name: impl Into<String>, field: impl Into<String>, message: impl Into<String>) -> Self {
        SimError::Config {
            source_name: source_name.into(),
            field: field.into(),
            message: message.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        SimError::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code: 1 for configuration problems, 2 for runtime
    /// invariant violations and output failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            SimError::Config { .. } => 1,
            _ => 2,
        }
    }
}
