//! Customer-side orchestration of a training run.
//!
//! Per round, one job request per data shard goes to a distinct provider.
//! Each slot walks `Requested → PaymentRequested → Paid → Processing →
//! ResultReady → Validated`; a timeout, error feedback, integrity failure
//! or failed validation moves it to `Failed` and hands the identical
//! request to a fresh provider. Validated outputs are paid for and
//! combined by the outer step, locally or by a delegated provider.

mod discovery;
mod log;
mod run;

pub use discovery::{discover_providers, DiscoveredProvider};
pub use log::{read_round_log, LogPhase, LogRecord, RoundLog};
pub use run::{run_training, Customer, RoundReport, RunStats, SlotPhase, TrainingOutcome};

use std::path::PathBuf;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::events::{EventError, KIND_FEDERATED_TRAINING};
use crate::job::JobError;
use crate::ml::{Dataset, InnerHyperparams, LossSpec, MlError, ModelSpec, NesterovConfig, RunOption};
use crate::nostr::Keypair;
use crate::payments::PaymentError;
use crate::relay::PoolError;
use crate::store::StoreError;
use crate::validation::{TestType, ValidationError};

/// Where the outer step runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OuterMode {
    /// The customer aggregates itself.
    #[serde(rename = "self")]
    Local,
    /// A provider runs the outer step as a job.
    Delegate,
}

impl OuterMode {
    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "self" => Some(OuterMode::Local),
            "delegate" => Some(OuterMode::Delegate),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Timeouts {
    /// Poll period for timeouts.
    pub feedback_interval: Duration,
    /// Silence from a provider longer than this fails its slot.
    pub job_timeout: Duration,
    /// How long discovery retries before giving up.
    pub discovery_window: Duration,
}

impl Default for Timeouts {
    fn default() -> Self {
        Self {
            feedback_interval: Duration::from_secs(1),
            job_timeout: Duration::from_secs(30),
            discovery_window: Duration::from_secs(10),
        }
    }
}

/// Budget per provider: an upfront payment on request, and one on a
/// validated result.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PaymentPolicy {
    pub init_msats: u64,
    pub round_msats: u64,
}

impl Default for PaymentPolicy {
    fn default() -> Self {
        Self {
            init_msats: 100,
            round_msats: 900,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationPolicy {
    /// Test applied to inner outputs; delegated outer outputs always use B.
    pub inner_test: TestType,
    /// Defaults to half the test-set size.
    pub gamma_t: Option<f64>,
    /// Defaults to the initial model's summed test loss.
    pub beta_t: Option<f64>,
    pub tau_c: usize,
}

impl Default for ValidationPolicy {
    fn default() -> Self {
        Self {
            inner_test: TestType::A,
            gamma_t: None,
            beta_t: None,
            tau_c: 2,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CustomerConfig {
    pub keys: Keypair,
    pub relays: Vec<String>,
    pub kind: u16,
    pub num_pr: usize,
    pub num_jobs: usize,
    pub run_option: RunOption,
    pub outer_mode: OuterMode,
    pub timeouts: Timeouts,
    pub payment: PaymentPolicy,
    /// Stop once the mean test loss reaches this value.
    pub target_loss: Option<f64>,
    pub validation: ValidationPolicy,
    pub dataset: Dataset,
    /// Held-out set for validation; carved from `dataset` when absent.
    pub test_dataset: Option<Dataset>,
    pub test_fraction: f64,
    pub model: ModelSpec,
    pub loss: LossSpec,
    pub hyperparams: InnerHyperparams,
    pub nesterov: NesterovConfig,
    /// Outer aggregation weights; empty means all ones.
    pub weights: Vec<f64>,
    /// Seeds the holdout, the shard split and per-round shuffles.
    pub seed: u64,
    /// Reassignments allowed per slot per round.
    pub max_attempts: usize,
    /// Providers to pick first when available.
    pub prefer: Vec<String>,
    pub log_out: Option<PathBuf>,
}

impl CustomerConfig {
    pub fn new(keys: Keypair, relays: Vec<String>, dataset: Dataset, model: ModelSpec, loss: LossSpec) -> Self {
        Self {
            keys,
            relays,
            kind: KIND_FEDERATED_TRAINING,
            num_pr: 2,
            num_jobs: 3,
            run_option: RunOption::FedAvg,
            outer_mode: OuterMode::Local,
            timeouts: Timeouts::default(),
            payment: PaymentPolicy::default(),
            target_loss: None,
            validation: ValidationPolicy::default(),
            dataset,
            test_dataset: None,
            test_fraction: 0.2,
            model,
            loss,
            hyperparams: InnerHyperparams::default(),
            nesterov: NesterovConfig::default(),
            weights: Vec::new(),
            seed: 0,
            max_attempts: 5,
            prefer: Vec::new(),
            log_out: None,
        }
    }

    pub fn validate(&self) -> Result<(), CustomerError> {
        let bad = |m: &str| Err(CustomerError::Config(m.to_string()));
        if self.num_pr == 0 {
            return bad("num_pr must be at least 1");
        }
        if self.num_jobs == 0 {
            return bad("num_jobs must be at least 1");
        }
        if self.timeouts.job_timeout <= self.timeouts.feedback_interval {
            return bad("job timeout must exceed the feedback interval");
        }
        if self.timeouts.feedback_interval.is_zero() {
            return bad("feedback interval must be positive");
        }
        if self.relays.is_empty() {
            return bad("no relays");
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) && self.test_dataset.is_none() {
            return bad("test fraction must be in (0, 1)");
        }
        if !self.weights.is_empty() && self.weights.len() != self.num_pr {
            return bad("one weight per provider");
        }
        self.model.validate()?;
        self.hyperparams.validate()?;
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum CustomerError {
    #[error("invalid customer config: {0}")]
    Config(String),
    #[error("found {found} of {needed} providers")]
    InsufficientProviders { found: usize, needed: usize },
    #[error("slot {slot}: reassignment exhausted after {attempts} attempts")]
    ReassignmentExhausted { slot: String, attempts: usize },
    #[error("relays lost")]
    RelaysLost,
    #[error(transparent)]
    Relay(#[from] PoolError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Job(#[from] JobError),
    #[error(transparent)]
    Ml(#[from] MlError),
    #[error(transparent)]
    Validation(#[from] ValidationError),
    #[error(transparent)]
    Payment(#[from] PaymentError),
    #[error(transparent)]
    Event(#[from] EventError),
    #[error("round log: {0}")]
    Log(String),
}
