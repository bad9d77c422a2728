//! Process-level error with its documented exit code:
//! 0 ok, 2 configuration, 3 gateway dependency, 4 io/data.

use lirag_core::index::IndexError;
use lirag_core::retrieval::{PipelineError, StageFailure};

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn config(message: String) -> Self {
        Self { code: 2, message }
    }

    pub fn gateway(message: String) -> Self {
        Self { code: 3, message }
    }

    pub fn io(message: String) -> Self {
        Self { code: 4, message }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.message)
    }
}

impl From<IndexError> for CliError {
    fn from(err: IndexError) -> Self {
        let code = match &err {
            IndexError::Gateway { .. } | IndexError::Concurrency(_) => 3,
            _ => 4,
        };
        Self {
            code,
            message: err.to_string(),
        }
    }
}

impl From<&PipelineError> for CliError {
    fn from(err: &PipelineError) -> Self {
        let code = match &err.source {
            StageFailure::Gateway(_) => 3,
            _ => 2,
        };
        Self {
            code,
            message: err.to_string(),
        }
    }
}
