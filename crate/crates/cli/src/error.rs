use std::path::Path;

use thiserror::Error;

/// Command failure, mapped to the process exit code.
#[derive(Debug, Error)]
pub enum CliError {
    /// Bad arguments, bad config, unreadable input or unwritable output.
    #[error("{0}")]
    Usage(String),
    /// The accuracy evaluator could not be reached or broke its protocol.
    #[error("{0}")]
    Evaluator(String),
    #[error(transparent)]
    Other(#[from] anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Evaluator(_) => 3,
            CliError::Other(_) => 1,
        }
    }
}

pub fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

pub fn read_file(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| usage(format!("cannot read {}: {e}", path.display())))
}

pub fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| usage(format!("cannot create {}: {e}", parent.display())))?;
    }
    std::fs::write(path, contents).map_err(|e| usage(format!("cannot write {}: {e}", path.display())))
}
