//! Experiment driver: plan files, the run grid, result tables and the
//! numerical self-checks behind the `fedotlab` binary.

pub mod commands;
pub mod plan;
pub mod results;

use fedot_core::ot::OtError;
use fedsim::FedError;

#[derive(Debug, thiserror::Error)]
pub enum LabError {
    #[error("{0}")]
    Validation(String),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("numerical check failed: {0}")]
    Numerical(String),
    #[error("resource limit: {0}")]
    Resource(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl LabError {
    /// 1 for bad input, 2 for a failed numerical check, 3 for a cap.
    pub fn exit_code(&self) -> i32 {
        match self {
            LabError::Validation(_) | LabError::Parse { .. } | LabError::Io(_) => 1,
            LabError::Numerical(_) => 2,
            LabError::Resource(_) => 3,
        }
    }
}

impl From<FedError> for LabError {
    fn from(e: FedError) -> Self {
        match e {
            FedError::NonFinite { .. } | FedError::Constraint { .. } | FedError::Numeric(_) => LabError::Numerical(e.to_string()),
            FedError::Parse { line, message } => LabError::Parse { line, message },
            FedError::Io(e) => LabError::Io(e),
            FedError::InvalidArgument(m) => LabError::Validation(m),
        }
    }
}

impl From<OtError> for LabError {
    fn from(e: OtError) -> Self {
        match e {
            OtError::TooLarge { .. } => LabError::Resource(e.to_string()),
            OtError::Parse { line, message } => LabError::Parse { line, message },
            OtError::Constraint { .. } | OtError::NoConvergence { .. } | OtError::Lp(_) | OtError::Numeric(_) => LabError::Numerical(e.to_string()),
            _ => LabError::Validation(e.to_string()),
        }
    }
}

impl From<csv::Error> for LabError {
    fn from(e: csv::Error) -> Self {
        if e.is_io_error() {
            match e.into_kind() {
                csv::ErrorKind::Io(io) => LabError::Io(io),
                _ => unreachable!(),
            }
        } else {
            LabError::Validation(format!("results csv: {e}"))
        }
    }
}

impl From<serde_json::Error> for LabError {
    fn from(e: serde_json::Error) -> Self {
        LabError::Validation(format!("json: {e}"))
    }
}
