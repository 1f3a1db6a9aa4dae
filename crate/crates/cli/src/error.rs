use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("input error: {0}")]
    Input(String),

    #[error("missing prerequisite: {0}")]
    Missing(String),

    #[error("audit failed: {}", .0.join("; "))]
    Audit(Vec<String>),

    #[error(transparent)]
    Core(#[from] surfik::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Input(_) => 2,
            CliError::Missing(_) => 3,
            CliError::Audit(_) => 4,
            CliError::Core(_) | CliError::Io(_) => 1,
        }
    }
}
