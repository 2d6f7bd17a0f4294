//! Experiment orchestration: configuration, training, checkpoints,
//! evaluation reports and comparisons.

pub mod checkpoint;
pub mod compare;
pub mod config;
pub mod data;
pub mod evaluate;
pub mod figures;
pub mod io;
pub mod run;
pub mod train;
pub mod transfer;

use std::path::PathBuf;

use thiserror::Error;

use crate::baselines::BaselineError;
use crate::evalkit::EvalError;
use crate::evidential::EvidentialError;
use crate::model::ModelError;
use crate::numerics::NumericsError;
use crate::stormdata::DataError;

pub use checkpoint::Checkpoint;
pub use config::{ExperimentConfig, Variant};
pub use compare::{compare, Comparison};
pub use data::{build_dataset, Dataset};
pub use evaluate::{evaluate, EvalReport, Predictor};
pub use train::{train_model, Objective, TrainOutcome};
pub use transfer::pretrain_transfer;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Evidential(#[from] EvidentialError),
    #[error(transparent)]
    Baseline(#[from] BaselineError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error("cannot read {path}: {source}")]
    MissingInput {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("corrupt checkpoint: {0}")]
    Checkpoint(String),
    #[error("incompatible transfer: {0}")]
    Transfer(String),
    #[error("training diverged at step {step}: {detail}")]
    Divergence { step: u64, detail: String },
    #[error("reports were computed on different test splits: {0}")]
    SplitMismatch(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl HarnessError {
    /// Process exit code for this error category.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) => 2,
            HarnessError::Data(_) => 3,
            HarnessError::Model(_)
            | HarnessError::Evidential(_)
            | HarnessError::Baseline(_)
            | HarnessError::Eval(_)
            | HarnessError::Numerics(_) => 4,
            HarnessError::MissingInput { .. } | HarnessError::Checkpoint(_) => 5,
            HarnessError::Transfer(_) => 6,
            HarnessError::Divergence { .. } => 7,
            HarnessError::SplitMismatch(_) => 8,
            HarnessError::Io(_) => 9,
        }
    }
}

pub type Result<T> = std::result::Result<T, HarnessError>;
