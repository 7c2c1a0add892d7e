use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config parse error at line {line}, column {column}: {message}")]
    Parse { line: usize, column: usize, message: String },

    #[error("invalid config:\n  {}", .0.join("\n  "))]
    Invalid(Vec<String>),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("run halted by the gradient guard at iteration {iter}")]
    GuardHalt { iter: usize },

    #[error(transparent)]
    Core(#[from] bpu_core::Error),
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.display().to_string(),
            source,
        }
    }

    /// 0 ok, 1 config, 2 divergence halt, 3 I/O. Library errors inside a
    /// run count as configuration errors: they are contract violations the
    /// validator did not catch.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Parse { .. } | CliError::Invalid(_) | CliError::Core(_) => 1,
            CliError::GuardHalt { .. } => 2,
            CliError::Io { .. } => 3,
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
