use crate::nostr::{sign_event, unix_now, Event, EventTemplate, Keypair};

use super::{hex_id, malformed, parse_u64, tag, tag_opt, EventError, KIND_FEEDBACK};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FeedbackStatus {
    PaymentRequired,
    Processing,
    Error,
    Success,
    Partial,
}

impl FeedbackStatus {
    /// Hyphenated name used on the wire.
    pub fn as_wire(self) -> &'static str {
        match self {
            FeedbackStatus::PaymentRequired => "payment-required",
            FeedbackStatus::Processing => "processing",
            FeedbackStatus::Error => "error",
            FeedbackStatus::Success => "success",
            FeedbackStatus::Partial => "partial",
        }
    }

    pub fn from_wire(s: &str) -> Option<Self> {
        Some(match s {
            "payment-required" => FeedbackStatus::PaymentRequired,
            "processing" => FeedbackStatus::Processing,
            "error" => FeedbackStatus::Error,
            "success" => FeedbackStatus::Success,
            "partial" => FeedbackStatus::Partial,
            _ => return None,
        })
    }
}

/// Job feedback (kind 7000).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct JobFeedback {
    pub status: FeedbackStatus,
    pub extra_info: Option<String>,
    pub amount_msats: Option<u64>,
    pub bolt11: Option<String>,
    pub job_request_id: String,
    pub relay_hint: Option<String>,
    pub customer_pubkey: String,
    /// Event content: empty, or a partial/sample result.
    pub payload: String,
}

impl JobFeedback {
    pub fn new(status: FeedbackStatus, job_request_id: impl Into<String>, customer_pubkey: impl Into<String>) -> Self {
        Self {
            status,
            extra_info: None,
            amount_msats: None,
            bolt11: None,
            job_request_id: job_request_id.into(),
            relay_hint: None,
            customer_pubkey: customer_pubkey.into(),
            payload: String::new(),
        }
    }

    pub fn with_info(mut self, info: impl Into<String>) -> Self {
        self.extra_info = Some(info.into());
        self
    }

    pub fn with_amount(mut self, msats: u64, bolt11: Option<String>) -> Self {
        self.amount_msats = Some(msats);
        self.bolt11 = bolt11;
        self
    }

    pub fn with_payload(mut self, payload: impl Into<String>) -> Self {
        self.payload = payload.into();
        self
    }

    pub fn to_template(&self, pubkey: &str, created_at: u64) -> Result<EventTemplate, EventError> {
        hex_id("e", &self.job_request_id)?;
        hex_id("p", &self.customer_pubkey)?;
        if self.bolt11.is_some() && self.amount_msats.is_none() {
            return Err(malformed("amount", "bolt11 without an amount"));
        }
        let mut tags = vec![tag_opt(&["status", self.status.as_wire()], &[self.extra_info.as_deref()])];
        if let Some(a) = self.amount_msats {
            tags.push(tag_opt(&["amount", &a.to_string()], &[self.bolt11.as_deref()]));
        }
        tags.push(tag_opt(&["e", &self.job_request_id], &[self.relay_hint.as_deref()]));
        tags.push(tag(&["p", &self.customer_pubkey]));
        Ok(EventTemplate::new(pubkey, created_at, KIND_FEEDBACK, tags, self.payload.clone()))
    }

    pub fn from_event(e: &Event) -> Result<Self, EventError> {
        if e.kind != KIND_FEEDBACK {
            return Err(EventError::WrongKind {
                expected: KIND_FEEDBACK.to_string(),
                got: e.kind,
            });
        }
        let status_tag = e.tag("status").ok_or_else(|| EventError::MissingTag("status".into()))?;
        let raw = status_tag.get(1).ok_or_else(|| malformed("status", "empty"))?;
        let status = FeedbackStatus::from_wire(raw).ok_or_else(|| malformed("status", format!("unknown status {raw:?}")))?;
        let (amount_msats, bolt11) = match e.tag("amount") {
            Some(t) => {
                let v = t.get(1).ok_or_else(|| malformed("amount", "empty"))?;
                (Some(parse_u64("amount", v)?), t.get(2).cloned())
            }
            None => (None, None),
        };
        let e_tag = e.tag("e").ok_or_else(|| EventError::MissingTag("e".into()))?;
        let job_request_id = hex_id("e", e_tag.get(1).map(String::as_str).unwrap_or(""))?;
        let customer_pubkey = hex_id("p", e.tag_value("p").ok_or_else(|| EventError::MissingTag("p".into()))?)?;
        Ok(JobFeedback {
            status,
            extra_info: status_tag.get(2).cloned(),
            amount_msats,
            bolt11,
            job_request_id,
            relay_hint: e_tag.get(2).cloned(),
            customer_pubkey,
            payload: e.content.clone(),
        })
    }
}

pub fn build_feedback(fb: &JobFeedback, signer: &Keypair) -> Result<Event, EventError> {
    Ok(sign_event(fb.to_template(signer.public_key(), unix_now())?, signer)?)
}

pub fn parse_feedback(e: &Event) -> Result<JobFeedback, EventError> {
    JobFeedback::from_event(e)
}
