use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad flags, malformed files, unwritable outputs.
    #[error("{0}")]
    Validation(String),
    /// The computation itself failed.
    #[error("{0}")]
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Numerical(_) => 2,
        }
    }

    pub fn validation(msg: impl Into<String>) -> Self {
        CliError::Validation(msg.into())
    }
}

impl From<manifold_dp::Error> for CliError {
    fn from(e: manifold_dp::Error) -> Self {
        if e.is_numerical() {
            CliError::Numerical(e.to_string())
        } else {
            CliError::Validation(e.to_string())
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

pub(crate) fn io_error(action: &str, path: &std::path::Path, e: impl std::fmt::Display) -> CliError {
    CliError::Validation(format!("cannot {action} {}: {e}", path.display()))
}
