use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),

    /// Input data could not be read or does not fit the schema.
    #[error("data error: {0}")]
    Data(String),

    #[error(transparent)]
    Checkpoint(skipnet::Error),

    #[error(transparent)]
    Other(skipnet::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Checkpoint(_) => 4,
            CliError::Other(_) => 1,
        }
    }

    /// Wraps a failure while loading or preparing input data.
    pub fn data(e: skipnet::Error) -> Self {
        match e {
            skipnet::Error::Config(m) => CliError::Config(m),
            skipnet::Error::Checkpoint(_) => CliError::Checkpoint(e),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<skipnet::Error> for CliError {
    fn from(e: skipnet::Error) -> Self {
        match e {
            skipnet::Error::Config(m) => CliError::Config(m),
            skipnet::Error::Checkpoint(_) => CliError::Checkpoint(e),
            skipnet::Error::Schema(_) | skipnet::Error::Ingestion { .. } => {
                CliError::Data(e.to_string())
            }
            other => CliError::Other(other),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Other(e.into())
    }
}
