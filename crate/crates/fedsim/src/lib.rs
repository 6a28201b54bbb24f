//! Personalized federated learning with optimal-transport regularisation:
//! shifted client data, the model families, the FedOT objectives and an
//! in-process simulator of FedOT-GDA and its baselines.

pub mod gradcheck;
pub mod minimax;
pub mod model;
pub mod objective;
pub mod shift;
pub mod sim;

use fedot_core::NumError;

pub use model::{ClassifierKind, ClassifierParams, Head, ModelSpec, ParamBundle, PotentialKind, PotentialParams, TransportKind, TransportParams, Trunk};
pub use objective::{ClientLossReport, Objective, ObjectiveSpec};
pub use shift::{BaseTaskSpec, ClientDataset, FederatedTask, ShiftKind, ShiftSpec};
pub use sim::{AvgMode, FederationConfig, History, Method, RoundMetrics};

#[derive(Debug, thiserror::Error)]
pub enum FedError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("zero-sum constraint violated: residual {residual:e}")]
    Constraint { residual: f64 },
    #[error("non-finite value in {layer}")]
    NonFinite { layer: String },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Numeric(#[from] NumError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
