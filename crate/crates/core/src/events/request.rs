use crate::ml::RunOption;
use crate::nostr::{sign_event, unix_now, Event, EventTemplate, Keypair};
use crate::store::StorageRef;

use super::{hex_id, is_job_request_kind, malformed, non_empty, parse_u64, tag, tag_opt, EventError};

/// Inline model state larger than this must go through storage instead.
pub const MAX_INLINE_STATE_BYTES: usize = 64 * 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InputType {
    Url,
    Event,
    Job,
    Text,
}

impl InputType {
    pub fn as_str(self) -> &'static str {
        match self {
            InputType::Url => "url",
            InputType::Event => "event",
            InputType::Job => "job",
            InputType::Text => "text",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "url" => InputType::Url,
            "event" => InputType::Event,
            "job" => InputType::Job,
            "text" => InputType::Text,
            _ => return None,
        })
    }
}

/// One `i` tag: `["i", data, type, relay?, marker?]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct JobInput {
    pub data: String,
    pub input_type: InputType,
    pub relay_hint: Option<String>,
    pub marker: Option<String>,
}

impl JobInput {
    pub fn url(data: impl Into<String>) -> Self {
        Self {
            data: data.into(),
            input_type: InputType::Url,
            relay_hint: None,
            marker: None,
        }
    }

    /// Chains onto the output of a prior job request.
    pub fn job(request_id: impl Into<String>, relay_hint: Option<String>) -> Self {
        Self {
            data: request_id.into(),
            input_type: InputType::Job,
            relay_hint,
            marker: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Task {
    Inner,
    Outer,
}

impl Task {
    pub fn as_str(self) -> &'static str {
        match self {
            Task::Inner => "Inner",
            Task::Outer => "Outer",
        }
    }
}

/// The `initial/current-model-state` parameter: normally a storage
/// reference, optionally a small inline payload.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ModelState {
    Ref(StorageRef),
    Inline(String),
}

impl ModelState {
    fn to_value(&self) -> String {
        match self {
            ModelState::Ref(r) => r.to_tag_value(),
            ModelState::Inline(s) => s.clone(),
        }
    }

    fn parse(s: &str) -> Result<Self, EventError> {
        const TAG: &str = "param initial/current-model-state";
        if s.starts_with("url:") {
            let (r, extras) = StorageRef::parse_tag_value(s).map_err(|e| malformed(TAG, e.to_string()))?;
            if !extras.is_empty() {
                return Err(malformed(TAG, "unexpected fields after size"));
            }
            Ok(ModelState::Ref(r))
        } else if s.len() > MAX_INLINE_STATE_BYTES {
            Err(malformed(TAG, format!("inline state exceeds {MAX_INLINE_STATE_BYTES} bytes")))
        } else {
            Ok(ModelState::Inline(s.to_string()))
        }
    }
}

/// Training job request (kinds 8000-8999).
#[derive(Debug, Clone, PartialEq)]
pub struct JobRequest {
    pub kind: u16,
    pub inputs: Vec<JobInput>,
    pub output_spec: String,
    pub relays: Vec<String>,
    pub bid_msats: Option<u64>,
    pub providers: Vec<String>,
    pub task: Task,
    pub run_option: RunOption,
    pub data_set: Option<String>,
    pub model_state: Option<ModelState>,
    pub model_spec: Option<String>,
    pub source_code: Option<String>,
    pub expected_execution_time: Option<u64>,
    pub hardware_spec: Option<String>,
    pub validation_rules: Option<String>,
    pub timeout_max: Option<u64>,
    /// Further `param` tags, preserved in order.
    pub extra_params: Vec<(String, String)>,
    /// Prior job result this request chains on (`e` tag).
    pub prior_result: Option<String>,
}

const KNOWN_PARAMS: [&str; 10] = [
    "task",
    "run option",
    "data_set",
    "initial/current-model-state",
    "model",
    "source_code",
    "expected_execution_time",
    "recommended_hardware_specification",
    "validation_rules_for_the_output",
    "timeout-specification",
];

impl JobRequest {
    pub fn new(kind: u16, task: Task, run_option: RunOption) -> Self {
        Self {
            kind,
            inputs: Vec::new(),
            output_spec: "application/octet-stream".into(),
            relays: Vec::new(),
            bid_msats: None,
            providers: Vec::new(),
            task,
            run_option,
            data_set: None,
            model_state: None,
            model_spec: None,
            source_code: None,
            expected_execution_time: None,
            hardware_spec: None,
            validation_rules: None,
            timeout_max: None,
            extra_params: Vec::new(),
            prior_result: None,
        }
    }

    /// First extra param named `name`.
    pub fn param(&self, name: &str) -> Option<&str> {
        self.extra_params
            .iter()
            .find(|(k, _)| k == name)
            .map(|(_, v)| v.as_str())
    }

    pub fn primary_input(&self) -> Option<&JobInput> {
        self.inputs.iter().find(|i| i.marker.is_none())
    }

    pub fn validate(&self) -> Result<(), EventError> {
        if !is_job_request_kind(self.kind) {
            return Err(EventError::WrongKind {
                expected: "8000-8999".into(),
                got: self.kind,
            });
        }
        let primaries = self.inputs.iter().filter(|i| i.marker.is_none()).count();
        if primaries != 1 {
            return Err(malformed("i", format!("expected exactly one primary input, found {primaries}")));
        }
        for i in &self.inputs {
            if i.input_type == InputType::Job {
                hex_id("i", &i.data)?;
            }
            if i.marker.as_deref() == Some("") {
                return Err(malformed("i", "empty marker"));
            }
            if i.marker.is_some() && i.relay_hint.is_none() {
                return Err(malformed("i", "a marker needs a relay hint position"));
            }
        }
        for p in &self.providers {
            hex_id("p", p)?;
        }
        if let Some(e) = &self.prior_result {
            hex_id("e", e)?;
        }
        if let Some(ModelState::Inline(s)) = &self.model_state {
            if s.len() > MAX_INLINE_STATE_BYTES || s.starts_with("url:") {
                return Err(malformed("param initial/current-model-state", "inline state too large or ambiguous"));
            }
        }
        for (k, _) in &self.extra_params {
            if KNOWN_PARAMS.contains(&k.as_str()) {
                return Err(malformed("param", format!("{k:?} must use its typed field")));
            }
        }
        Ok(())
    }

    pub fn to_template(&self, pubkey: &str, created_at: u64) -> Result<EventTemplate, EventError> {
        self.validate()?;
        let mut tags = Vec::new();
        for i in &self.inputs {
            tags.push(tag_opt(
                &["i", &i.data, i.input_type.as_str()],
                &[i.relay_hint.as_deref(), i.marker.as_deref()],
            ));
        }
        tags.push(tag(&["output", &self.output_spec]));
        if !self.relays.is_empty() {
            let mut t = vec!["relays".to_string()];
            t.extend(self.relays.iter().cloned());
            tags.push(t);
        }
        if let Some(b) = self.bid_msats {
            tags.push(tag(&["bid", &b.to_string()]));
        }
        tags.push(tag(&["t", "bitcoin"]));
        for p in &self.providers {
            tags.push(tag(&["p", p]));
        }
        let mut param = |name: &str, value: Option<String>| {
            if let Some(v) = value {
                tags.push(tag(&["param", name, &v]));
            }
        };
        param("task", Some(self.task.as_str().into()));
        param("run option", Some(self.run_option.as_str().into()));
        param("data_set", self.data_set.clone());
        param("initial/current-model-state", self.model_state.as_ref().map(ModelState::to_value));
        param("model", self.model_spec.clone());
        param("source_code", self.source_code.clone());
        param("expected_execution_time", self.expected_execution_time.map(|v| v.to_string()));
        param("recommended_hardware_specification", self.hardware_spec.clone());
        param("validation_rules_for_the_output", self.validation_rules.clone());
        param("timeout-specification", self.timeout_max.map(|v| v.to_string()));
        for (k, v) in &self.extra_params {
            param(k, Some(v.clone()));
        }
        if let Some(e) = &self.prior_result {
            tags.push(tag(&["e", e]));
        }
        Ok(EventTemplate::new(pubkey, created_at, self.kind, tags, ""))
    }

    pub fn from_event(e: &Event) -> Result<Self, EventError> {
        if !is_job_request_kind(e.kind) {
            return Err(EventError::WrongKind {
                expected: "8000-8999".into(),
                got: e.kind,
            });
        }
        let mut inputs = Vec::new();
        for t in e.tags_named("i") {
            let (Some(data), Some(ty)) = (t.get(1), t.get(2)) else {
                return Err(malformed("i", "needs data and input type"));
            };
            let input_type = InputType::parse(ty).ok_or_else(|| malformed("i", format!("unknown input type {ty:?}")))?;
            inputs.push(JobInput {
                data: data.clone(),
                input_type,
                relay_hint: t.get(3).cloned(),
                marker: non_empty(t.get(4)),
            });
        }
        if inputs.is_empty() {
            return Err(EventError::MissingTag("i".into()));
        }
        let output_spec = e
            .tag_value("output")
            .ok_or_else(|| EventError::MissingTag("output".into()))?
            .to_string();
        let relays = e.tag("relays").map(|t| t[1..].to_vec()).unwrap_or_default();
        let bid_msats = e.tag_value("bid").map(|v| parse_u64("bid", v)).transpose()?;
        let providers: Vec<String> = e
            .tags_named("p")
            .map(|t| t.get(1).map(|p| hex_id("p", p)).unwrap_or_else(|| Err(malformed("p", "empty"))))
            .collect::<Result<_, _>>()?;

        let mut known: Vec<(&str, &str)> = Vec::new();
        let mut extra_params = Vec::new();
        for t in e.tags_named("param") {
            let (Some(name), Some(value)) = (t.get(1), t.get(2)) else {
                return Err(malformed("param", "needs a name and a value"));
            };
            if KNOWN_PARAMS.contains(&name.as_str()) {
                if let Some((_, prev)) = known.iter().find(|(k, _)| *k == name) {
                    if prev != value {
                        return Err(malformed(&format!("param {name}"), "conflicting duplicate"));
                    }
                    continue;
                }
                known.push((name, value));
            } else {
                extra_params.push((name.clone(), value.clone()));
            }
        }
        let get = |n: &str| known.iter().find(|(k, _)| *k == n).map(|(_, v)| *v);
        let task = match get("task") {
            Some("Inner") => Task::Inner,
            Some("Outer") => Task::Outer,
            Some(v) => return Err(malformed("param task", format!("{v:?} is not Inner or Outer"))),
            None => return Err(EventError::MissingTag("param task".into())),
        };
        let run_option = match get("run option") {
            Some(v) => RunOption::parse(v)
                .ok_or_else(|| malformed("param run option", format!("{v:?} is not FedAvg or DiLoCo")))?,
            None => return Err(EventError::MissingTag("param run option".into())),
        };
        let prior_result = e.tag_value("e").map(|v| hex_id("e", v)).transpose()?;
        let req = JobRequest {
            kind: e.kind,
            inputs,
            output_spec,
            relays,
            bid_msats,
            providers,
            task,
            run_option,
            data_set: get("data_set").map(str::to_string),
            model_state: get("initial/current-model-state").map(ModelState::parse).transpose()?,
            model_spec: get("model").map(str::to_string),
            source_code: get("source_code").map(str::to_string),
            expected_execution_time: get("expected_execution_time")
                .map(|v| parse_u64("param expected_execution_time", v))
                .transpose()?,
            hardware_spec: get("recommended_hardware_specification").map(str::to_string),
            validation_rules: get("validation_rules_for_the_output").map(str::to_string),
            timeout_max: get("timeout-specification")
                .map(|v| parse_u64("param timeout-specification", v))
                .transpose()?,
            extra_params,
            prior_result,
        };
        req.validate()?;
        Ok(req)
    }
}

pub fn build_job_request(req: &JobRequest, signer: &Keypair) -> Result<Event, EventError> {
    Ok(sign_event(req.to_template(signer.public_key(), unix_now())?, signer)?)
}

pub fn parse_job_request(e: &Event) -> Result<JobRequest, EventError> {
    JobRequest::from_event(e)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nostr::generate_keypair;

    fn keys() -> Keypair {
        generate_keypair(Some([7; 32])).unwrap()
    }

    fn sample() -> JobRequest {
        let mut r = JobRequest::new(8000, Task::Inner, RunOption::FedAvg);
        r.inputs.push(JobInput::url("file:///data/shard0.csv"));
        r.relays = vec!["ws://127.0.0.1:7000".into()];
        r.bid_msats = Some(1000);
        r.providers = vec!["ab".repeat(32)];
        r.data_set = Some("file:///data/shard0.csv".into());
        r.model_state = Some(ModelState::Ref(StorageRef {
            url: "file:///m/model_x.bin".into(),
            sha256: "cd".repeat(32),
            size_bytes: 52,
        }));
        r.model_spec = Some(r#"{"family":{"type":"linear_regression"},"input_dim":3,"output_dim":1}"#.into());
        r.timeout_max = Some(30);
        r.extra_params = vec![("hyperparams".into(), "{\"epochs\":2}".into())];
        r
    }

    #[test]
    fn carries_task_and_run_option_params() {
        let e = build_job_request(&sample(), &keys()).unwrap();
        assert!(e.tags.contains(&tag(&["param", "task", "Inner"])));
        assert!(e.tags.contains(&tag(&["param", "run option", "FedAvg"])));
        assert!(e.tags.contains(&tag(&["t", "bitcoin"])));
        assert_eq!(e.content, "");
    }

    #[test]
    fn round_trip() {
        let r = sample();
        assert_eq!(parse_job_request(&build_job_request(&r, &keys()).unwrap()).unwrap(), r);
    }

    #[test]
    fn chained_round_trip() {
        let mut r = sample();
        r.inputs = vec![JobInput::job("ef".repeat(32), Some("ws://r".into()))];
        r.prior_result = Some("12".repeat(32));
        r.task = Task::Outer;
        r.run_option = RunOption::DiLoCo;
        assert_eq!(parse_job_request(&build_job_request(&r, &keys()).unwrap()).unwrap(), r);
    }

    #[test]
    fn wrong_kind() {
        let k = keys();
        let e = build_job_request(&sample(), &k).unwrap();
        let mut t = e.template();
        t.kind = 5000;
        let e = sign_event(t, &k).unwrap();
        assert!(matches!(parse_job_request(&e), Err(EventError::WrongKind { got: 5000, .. })));
    }

    fn without(name: &str) -> Event {
        let k = keys();
        let mut t = sample().to_template(k.public_key(), 1).unwrap();
        t.tags.retain(|x| !(x[0] == "param" && x[1] == name));
        sign_event(t, &k).unwrap()
    }

    #[test]
    fn missing_task_or_run_option_names_the_tag() {
        assert_eq!(parse_job_request(&without("task")), Err(EventError::MissingTag("param task".into())));
        assert_eq!(
            parse_job_request(&without("run option")),
            Err(EventError::MissingTag("param run option".into()))
        );
    }

    #[test]
    fn job_input_must_be_an_event_id() {
        let mut r = sample();
        r.inputs = vec![JobInput::job("not-an-id", None)];
        assert!(r.to_template(keys().public_key(), 1).is_err());
    }

    #[test]
    fn exactly_one_primary_input() {
        let mut r = sample();
        r.inputs.push(JobInput::url("file:///other"));
        assert!(r.validate().is_err());
        r.inputs.pop();
        r.inputs.push(JobInput {
            data: "aux".into(),
            input_type: InputType::Text,
            relay_hint: Some(String::new()),
            marker: Some("notes".into()),
        });
        assert!(r.validate().is_ok());
        assert_eq!(parse_job_request(&build_job_request(&r, &keys()).unwrap()).unwrap(), r);
    }

    #[test]
    fn inline_state_size_limit() {
        let k = keys();
        let mut r = sample();
        r.model_state = Some(ModelState::Inline("x".repeat(MAX_INLINE_STATE_BYTES)));
        assert_eq!(parse_job_request(&build_job_request(&r, &k).unwrap()).unwrap(), r);
        r.model_state = Some(ModelState::Inline("x".repeat(MAX_INLINE_STATE_BYTES + 1)));
        assert!(build_job_request(&r, &k).is_err());
    }

    #[test]
    fn conflicting_duplicate_params_rejected() {
        let k = keys();
        let mut t = sample().to_template(k.public_key(), 1).unwrap();
        t.tags.push(tag(&["param", "task", "Outer"]));
        assert!(parse_job_request(&sign_event(t, &k).unwrap()).is_err());
    }

    #[test]
    fn unknown_run_option_rejected() {
        let k = keys();
        let mut t = sample().to_template(k.public_key(), 1).unwrap();
        for x in &mut t.tags {
            if x[0] == "param" && x[1] == "run option" {
                x[2] = "Fevavg".into();
            }
        }
        assert!(matches!(parse_job_request(&sign_event(t, &k).unwrap()), Err(EventError::MalformedTag { .. })));
    }
}
