//! How training work is encoded into job requests and results.
//!
//! Inner jobs carry the data shard (`i` url plus a `data_set` ref with its
//! digest), the current global model and a JSON [`TrainingSpec`] in the
//! `model` param. Outer jobs carry the global model as primary input, one
//! `i` tag per inner output marked `inner`, and the aggregation state as a
//! stored JSON blob referenced from the `outer_state` param. Outer results
//! return the updated state under the `outer_state` info label.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::events::{InputType, JobInput, JobRequest, ModelState, Task};
use crate::ml::{Dataset, InnerHyperparams, LossSpec, MlError, ModelParams, ModelSpec, OuterState, RunOption, TargetKind};
use crate::store::{get_model, get_params, put_model, StorageRef, StoreError, ModelStore};

pub const PARAM_OUTER_STATE: &str = "outer_state";
pub const INFO_OUTER_STATE: &str = "outer_state";
pub const INNER_MARKER: &str = "inner";
pub const CSV_MIME: &str = "text/csv";

#[derive(Debug, Error)]
pub enum JobError {
    #[error("job request: {0}")]
    Request(String),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Ml(#[from] MlError),
}

/// Model, loss and inner hyperparameters, as carried in the `model` param.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSpec {
    pub model: ModelSpec,
    pub loss: LossSpec,
    pub hyperparams: InnerHyperparams,
}

impl TrainingSpec {
    pub fn target_kind(&self) -> TargetKind {
        match self.loss {
            LossSpec::Mse => TargetKind::Real,
            LossSpec::CrossEntropy => TargetKind::Classes,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("training spec serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, JobError> {
        serde_json::from_str(s).map_err(|e| JobError::Request(format!("model param: {e}")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InnerJob {
    pub run_option: RunOption,
    pub data: StorageRef,
    pub global: StorageRef,
    pub spec: TrainingSpec,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OuterJob {
    pub run_option: RunOption,
    pub global: StorageRef,
    pub inner: Vec<StorageRef>,
    pub state: StorageRef,
    pub spec: TrainingSpec,
}

#[derive(Debug, Clone, PartialEq)]
pub enum JobPlan {
    Inner(InnerJob),
    Outer(OuterJob),
}

impl JobPlan {
    pub fn task(&self) -> Task {
        match self {
            JobPlan::Inner(_) => Task::Inner,
            JobPlan::Outer(_) => Task::Outer,
        }
    }

    /// Request addressed to `provider`. Pricing, relays and chaining are
    /// left for the caller.
    pub fn to_request(&self, kind: u16, provider: &str) -> JobRequest {
        let mut r = match self {
            JobPlan::Inner(j) => {
                let mut r = JobRequest::new(kind, Task::Inner, j.run_option);
                r.inputs.push(JobInput::url(j.data.url.clone()));
                r.data_set = Some(j.data.to_tag_value());
                r.model_state = Some(ModelState::Ref(j.global.clone()));
                r.model_spec = Some(j.spec.to_json());
                r
            }
            JobPlan::Outer(j) => {
                let mut r = JobRequest::new(kind, Task::Outer, j.run_option);
                r.inputs.push(JobInput::url(j.global.url.clone()));
                for o in &j.inner {
                    r.inputs.push(JobInput {
                        data: o.to_tag_value(),
                        input_type: InputType::Text,
                        relay_hint: Some(String::new()),
                        marker: Some(INNER_MARKER.into()),
                    });
                }
                r.model_state = Some(ModelState::Ref(j.global.clone()));
                r.model_spec = Some(j.spec.to_json());
                r.extra_params.push((PARAM_OUTER_STATE.into(), j.state.to_tag_value()));
                r
            }
        };
        r.providers = vec![provider.to_string()];
        r
    }

    pub fn from_request(r: &JobRequest) -> Result<Self, JobError> {
        let bad = |m: &str| JobError::Request(m.to_string());
        let spec = TrainingSpec::from_json(r.model_spec.as_deref().ok_or_else(|| bad("missing model param"))?)?;
        let global = match &r.model_state {
            Some(ModelState::Ref(g)) => g.clone(),
            _ => return Err(bad("model state must be a storage reference")),
        };
        let parse_ref = |s: &str| -> Result<StorageRef, JobError> {
            let (r, _) = StorageRef::parse_tag_value(s)?;
            Ok(r)
        };
        match r.task {
            Task::Inner => {
                let data = parse_ref(r.data_set.as_deref().ok_or_else(|| bad("missing data_set param"))?)?;
                Ok(JobPlan::Inner(InnerJob {
                    run_option: r.run_option,
                    data,
                    global,
                    spec,
                }))
            }
            Task::Outer => {
                let inner = r
                    .inputs
                    .iter()
                    .filter(|i| i.marker.as_deref() == Some(INNER_MARKER))
                    .map(|i| parse_ref(&i.data))
                    .collect::<Result<Vec<_>, _>>()?;
                if inner.is_empty() {
                    return Err(bad("outer job without inner outputs"));
                }
                let state = parse_ref(r.param(PARAM_OUTER_STATE).ok_or_else(|| bad("missing outer_state param"))?)?;
                Ok(JobPlan::Outer(OuterJob {
                    run_option: r.run_option,
                    global,
                    inner,
                    state,
                    spec,
                }))
            }
        }
    }
}

pub fn put_dataset(d: &Dataset, store: &dyn ModelStore) -> Result<StorageRef, JobError> {
    Ok(put_model(&d.to_csv_bytes(), store)?)
}

pub fn get_dataset(r: &StorageRef, kind: TargetKind, store: &dyn ModelStore) -> Result<Dataset, JobError> {
    Ok(Dataset::from_csv_bytes(&get_model(r, store)?, kind)?)
}

pub fn put_outer_state(s: &OuterState, store: &dyn ModelStore) -> Result<StorageRef, JobError> {
    let json = serde_json::to_vec(s).expect("outer state serializes");
    Ok(put_model(&json, store)?)
}

pub fn get_outer_state(r: &StorageRef, store: &dyn ModelStore) -> Result<OuterState, JobError> {
    serde_json::from_slice(&get_model(r, store)?).map_err(|e| JobError::Request(format!("outer state: {e}")))
}

/// Fetches every referenced model, failing on the first integrity error.
pub fn get_all_params(refs: &[StorageRef], store: &dyn ModelStore) -> Result<Vec<ModelParams>, JobError> {
    refs.iter().map(|r| Ok(get_params(r, store)?)).collect()
}
