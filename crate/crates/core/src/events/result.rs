use crate::nostr::{sign_event, unix_now, Event, EventTemplate, Keypair};
use crate::store::StorageRef;

use super::{hex_id, is_job_result_kind, malformed, parse_u64, tag, tag_opt, EventError};

/// Fourth element of an `e` tag pointing at a NIP-94 metadata event.
pub const NIP94_MARKER: &str = "nip94";

/// Job result (kinds 6000-6999).
#[derive(Debug, Clone, PartialEq)]
pub struct JobResult {
    pub kind: u16,
    /// The original request event as stringified JSON.
    pub request_json: String,
    pub job_request_id: String,
    pub relay_hint: Option<String>,
    pub customer_pubkey: String,
    pub amount_msats: Option<u64>,
    pub bolt11: Option<String>,
    /// `["i", label, value]` pairs for the customer's validation.
    pub info: Vec<(String, String)>,
    pub output: StorageRef,
    pub reported_loss: Option<f64>,
    /// Id of a kind-1063 event describing the same blob.
    pub file_metadata_id: Option<String>,
    pub content: String,
}

impl JobResult {
    pub fn info_value(&self, label: &str) -> Option<&str> {
        self.info.iter().find(|(k, _)| k == label).map(|(_, v)| v.as_str())
    }

    fn output_value(&self) -> String {
        let mut s = self.output.to_tag_value();
        if let Some(l) = self.reported_loss {
            s.push_str(&format!(";loss:{l}"));
        }
        s
    }

    pub fn to_template(&self, pubkey: &str, created_at: u64) -> Result<EventTemplate, EventError> {
        if !is_job_result_kind(self.kind) {
            return Err(EventError::WrongKind {
                expected: "6000-6999".into(),
                got: self.kind,
            });
        }
        hex_id("e", &self.job_request_id)?;
        hex_id("p", &self.customer_pubkey)?;
        if !crate::nostr::is_lower_hex(&self.output.sha256, 64) {
            return Err(malformed("output", "sha256 must be 64 lowercase hex chars"));
        }
        if self.reported_loss.is_some_and(|l| !l.is_finite()) {
            return Err(malformed("output", "loss must be finite"));
        }
        if self.bolt11.is_some() && self.amount_msats.is_none() {
            return Err(malformed("amount", "bolt11 without an amount"));
        }
        let mut tags = vec![
            tag(&["request", &self.request_json]),
            tag_opt(&["e", &self.job_request_id], &[self.relay_hint.as_deref()]),
            tag(&["p", &self.customer_pubkey]),
        ];
        if let Some(a) = self.amount_msats {
            tags.push(tag_opt(&["amount", &a.to_string()], &[self.bolt11.as_deref()]));
        }
        for (k, v) in &self.info {
            tags.push(tag(&["i", k, v]));
        }
        tags.push(tag(&["output", &self.output_value()]));
        if let Some(m) = &self.file_metadata_id {
            hex_id("e", m)?;
            let hint = self.relay_hint.as_deref().unwrap_or("");
            tags.push(tag(&["e", m, hint, NIP94_MARKER]));
        }
        Ok(EventTemplate::new(pubkey, created_at, self.kind, tags, self.content.clone()))
    }

    pub fn from_event(e: &Event) -> Result<Self, EventError> {
        if !is_job_result_kind(e.kind) {
            return Err(EventError::WrongKind {
                expected: "6000-6999".into(),
                got: e.kind,
            });
        }
        let request_json = e
            .tag_value("request")
            .ok_or_else(|| EventError::MissingTag("request".into()))?
            .to_string();
        let mut request_tag = None;
        let mut file_metadata_id = None;
        for t in e.tags_named("e") {
            if t.get(3).map(String::as_str) == Some(NIP94_MARKER) {
                file_metadata_id = Some(hex_id("e", t.get(1).map(String::as_str).unwrap_or(""))?);
            } else if request_tag.is_none() {
                request_tag = Some(t);
            }
        }
        let e_tag = request_tag.ok_or_else(|| EventError::MissingTag("e".into()))?;
        let job_request_id = hex_id("e", e_tag.get(1).map(String::as_str).unwrap_or(""))?;
        let customer_pubkey = hex_id("p", e.tag_value("p").ok_or_else(|| EventError::MissingTag("p".into()))?)?;
        let (amount_msats, bolt11) = match e.tag("amount") {
            Some(t) => {
                let v = t.get(1).ok_or_else(|| malformed("amount", "empty"))?;
                (Some(parse_u64("amount", v)?), t.get(2).cloned())
            }
            None => (None, None),
        };
        let mut info = Vec::new();
        for t in e.tags_named("i") {
            let (Some(k), Some(v)) = (t.get(1), t.get(2)) else {
                return Err(malformed("i", "needs a label and a value"));
            };
            info.push((k.clone(), v.clone()));
        }
        let raw = e
            .tag_value("output")
            .ok_or_else(|| EventError::MissingTag("output".into()))?;
        let (output, extras) = StorageRef::parse_tag_value(raw).map_err(|err| malformed("output", err.to_string()))?;
        let mut reported_loss = None;
        for (k, v) in extras {
            if k == "loss" {
                let l: f64 = v.parse().map_err(|_| malformed("output", format!("bad loss {v:?}")))?;
                if !l.is_finite() {
                    return Err(malformed("output", "loss must be finite"));
                }
                reported_loss = Some(l);
            }
        }
        Ok(JobResult {
            kind: e.kind,
            request_json,
            job_request_id,
            relay_hint: e_tag.get(2).cloned(),
            customer_pubkey,
            amount_msats,
            bolt11,
            info,
            output,
            reported_loss,
            file_metadata_id,
            content: e.content.clone(),
        })
    }
}

pub fn build_job_result(r: &JobResult, signer: &Keypair) -> Result<Event, EventError> {
    Ok(sign_event(r.to_template(signer.public_key(), unix_now())?, signer)?)
}

pub fn parse_job_result(e: &Event) -> Result<JobResult, EventError> {
    JobResult::from_event(e)
}
