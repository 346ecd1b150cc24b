use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Unreadable or malformed input data.
    #[error("{0}")]
    Input(String),
    /// A configuration that cannot be run.
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => 2,
            CliError::Config(_) => 3,
            CliError::Io(_) => 1,
        }
    }
}

impl From<copeq::error::Error> for CliError {
    fn from(e: copeq::error::Error) -> Self {
        match e {
            copeq::error::Error::Domain(_) => CliError::Input(e.to_string()),
            copeq::error::Error::Config(_) | copeq::error::Error::Capacity(_) => CliError::Config(e.to_string()),
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
