use thiserror::Error;

/// Stage failure, split by who has to fix it.
#[derive(Debug, Error)]
pub enum CliError {
    /// Bad arguments, missing inputs, unwritable outputs. Exit code 1.
    #[error("{0}")]
    User(String),
    /// Inputs exist but their content is malformed or inconsistent. Exit code 2.
    #[error("{0}")]
    Data(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::User(_) => 1,
            CliError::Data(_) => 2,
        }
    }
}

pub(crate) fn user(msg: impl Into<String>) -> CliError {
    CliError::User(msg.into())
}

pub(crate) fn data(msg: impl Into<String>) -> CliError {
    CliError::Data(msg.into())
}
