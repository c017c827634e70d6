//! Desk-scale models and the optimizers used by the marketplace.
//!
//! Inner optimization runs minibatch SGD (FedAvg) or AdamW (DiLoCo) on a
//! provider's shard; outer optimization combines the inner results either by
//! weighted averaging (FedAvg) or by a Nesterov-momentum step on the averaged
//! outer gradient (DiLoCo).

mod codec;
mod data;
mod model;
mod optim;
mod outer;
mod params;

pub use codec::{deserialize_params, serialize_params, PARAMS_MAGIC, PARAMS_VERSION};
pub use data::{
    split_dataset, synthetic_classify, synthetic_linear, synthetic_linear_holdout, Dataset,
    TargetKind, Targets,
};
pub use model::{
    grad, init_model, loss, loss_and_grad, predict, total_loss, Activation, LossSpec, ModelFamily,
    ModelSpec,
};
pub use optim::{inner_optimize, AdamWConfig, InnerHyperparams, RunOption};
pub use outer::{outer_diloco, outer_fedavg, NesterovConfig, OuterState};
pub use params::{ModelParams, TensorSpec};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MlError {
    #[error("dimension mismatch: {0}")]
    DimMismatch(String),
    #[error("invalid model spec: {0}")]
    InvalidSpec(String),
    #[error("invalid hyperparameters: {0}")]
    InvalidHyperparams(String),
    #[error("invalid params: {0}")]
    InvalidParams(String),
    #[error("layout mismatch: {0}")]
    LayoutMismatch(String),
    #[error("non-finite loss at step {step}")]
    Divergence { step: usize, last_finite: ModelParams },
    #[error("param blob format: {0}")]
    Format(String),
    #[error("dataset: {0}")]
    Dataset(String),
}
