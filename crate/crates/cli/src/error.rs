use std::path::Path;

use thiserror::Error;

/// Failure of a CLI command, classified by its exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("runtime error: {0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Runtime(_) => 4,
        }
    }

    pub(crate) fn io(path: &Path, e: std::io::Error) -> Self {
        CliError::Data(format!("{}: {e}", path.display()))
    }
}

impl From<relocl_core::experiment::ExperimentError> for CliError {
    fn from(e: relocl_core::experiment::ExperimentError) -> Self {
        use relocl_core::experiment::ExperimentError as E;
        use relocl_core::relocnet::ModelError;
        match e {
            E::Model(ModelError::CatalogMismatch) => CliError::Data(e.to_string()),
            E::Config(_) | E::StrategyState(_) => CliError::Config(e.to_string()),
            E::EmptyDataset(_) | E::NoPairs { .. } | E::SessionMismatch { .. } | E::Sim(_) => {
                CliError::Data(e.to_string())
            }
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<relocl_core::routinesim::SimError> for CliError {
    fn from(e: relocl_core::routinesim::SimError) -> Self {
        CliError::Config(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
