use tripart_core::Error as CoreError;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] CoreError),

    #[error("{0}")]
    Validation(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type CliResult<T> = std::result::Result<T, CliError>;

pub const EXIT_OK: u8 = 0;
pub const EXIT_RUNTIME: u8 = 1;
pub const EXIT_VALIDATION: u8 = 2;
pub const EXIT_USAGE: u8 = 64;

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Validation(_) => EXIT_VALIDATION,
            CliError::Core(e) => match e {
                CoreError::InvalidArgument(_)
                | CoreError::InsufficientData(_)
                | CoreError::InvalidPrompt(_)
                | CoreError::BehindCamera { .. }
                | CoreError::NotACache(_)
                | CoreError::CorruptArchive(_)
                | CoreError::IncompleteArchive(_) => EXIT_VALIDATION,
                _ => EXIT_RUNTIME,
            },
            CliError::Io(_) => EXIT_RUNTIME,
        }
    }
}

pub fn validation(msg: impl Into<String>) -> CliError {
    CliError::Validation(msg.into())
}
