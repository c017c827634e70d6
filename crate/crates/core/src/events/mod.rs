//! Typed views over the FEDSTR event family: job requests (8000-8999),
//! results (6000-6999), feedback (7000), provider announcements (31990) and
//! NIP-94 file metadata (1063).
//!
//! Each record converts to an unsigned [`EventTemplate`] and back. Parsers
//! are strict: a missing or malformed mandatory tag yields an error naming
//! that tag.

mod discovery;
mod feedback;
mod file_metadata;
mod request;
mod result;

pub use discovery::{build_discoverability, parse_discoverability, Discoverability, ProviderSpec};
pub use feedback::{build_feedback, parse_feedback, FeedbackStatus, JobFeedback};
pub use file_metadata::{build_file_metadata, parse_file_metadata, FileMetadata};
pub use request::{
    build_job_request, parse_job_request, InputType, JobInput, JobRequest, ModelState, Task,
    MAX_INLINE_STATE_BYTES,
};
pub use result::{build_job_result, parse_job_result, JobResult, NIP94_MARKER};

use thiserror::Error;

use crate::nostr::NostrError;

pub const KIND_JOB_REQUEST_MIN: u16 = 8000;
pub const KIND_JOB_REQUEST_MAX: u16 = 8999;
pub const KIND_JOB_RESULT_MIN: u16 = 6000;
pub const KIND_JOB_RESULT_MAX: u16 = 6999;
pub const KIND_FEEDBACK: u16 = 7000;
pub const KIND_DISCOVERABILITY: u16 = 31990;
pub const KIND_FILE_METADATA: u16 = 1063;
pub const KIND_ZAP_REQUEST: u16 = 9734;
pub const KIND_ZAP_RECEIPT: u16 = 9735;

/// Federated learning inner/outer jobs.
pub const KIND_FEDERATED_TRAINING: u16 = 8000;

/// Result kind answering a request of kind `8000 + k`: `6000 + k`.
pub fn result_kind_for(request_kind: u16) -> Option<u16> {
    is_job_request_kind(request_kind).then(|| request_kind - 2000)
}

pub fn is_job_request_kind(kind: u16) -> bool {
    (KIND_JOB_REQUEST_MIN..=KIND_JOB_REQUEST_MAX).contains(&kind)
}

pub fn is_job_result_kind(kind: u16) -> bool {
    (KIND_JOB_RESULT_MIN..=KIND_JOB_RESULT_MAX).contains(&kind)
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EventError {
    #[error("wrong kind: expected {expected}, got {got}")]
    WrongKind { expected: String, got: u16 },
    #[error("missing tag: {0}")]
    MissingTag(String),
    #[error("malformed tag {tag}: {reason}")]
    MalformedTag { tag: String, reason: String },
    #[error("invalid record: {0}")]
    Invalid(String),
    #[error(transparent)]
    Nostr(#[from] NostrError),
}

pub(crate) fn malformed(tag: &str, reason: impl Into<String>) -> EventError {
    EventError::MalformedTag {
        tag: tag.to_string(),
        reason: reason.into(),
    }
}

pub(crate) fn tag<S: AsRef<str>>(parts: &[S]) -> Vec<String> {
    parts.iter().map(|s| s.as_ref().to_string()).collect()
}

/// Tag with trailing optional elements; a `None` stops the list so that
/// later values never shift position.
pub(crate) fn tag_opt(head: &[&str], tail: &[Option<&str>]) -> Vec<String> {
    let mut t = tag(head);
    for v in tail {
        match v {
            Some(v) => t.push(v.to_string()),
            None => break,
        }
    }
    t
}

pub(crate) fn parse_u64(tag: &str, s: &str) -> Result<u64, EventError> {
    if s.is_empty() || !s.bytes().all(|b| b.is_ascii_digit()) || (s.len() > 1 && s.starts_with('0')) {
        return Err(malformed(tag, format!("{s:?} is not a base-10 integer")));
    }
    s.parse().map_err(|_| malformed(tag, format!("{s:?} out of range")))
}

pub(crate) fn hex_id(tag: &str, s: &str) -> Result<String, EventError> {
    if crate::nostr::is_lower_hex(s, 64) {
        Ok(s.to_string())
    } else {
        Err(malformed(tag, format!("{s:?} is not a 64-char lowercase hex id")))
    }
}

pub(crate) fn non_empty(s: Option<&String>) -> Option<String> {
    s.filter(|v| !v.is_empty()).cloned()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn result_kind_mapping() {
        assert_eq!(result_kind_for(8000), Some(6000));
        assert_eq!(result_kind_for(8999), Some(6999));
        assert_eq!(result_kind_for(5000), None);
    }

    #[test]
    fn integer_parsing_is_strict() {
        assert_eq!(parse_u64("amount", "1000"), Ok(1000));
        assert_eq!(parse_u64("amount", "0"), Ok(0));
        for bad in ["", "-1", "1.5", "01", " 1", "99999999999999999999999"] {
            assert!(parse_u64("amount", bad).is_err(), "{bad}");
        }
    }
}
