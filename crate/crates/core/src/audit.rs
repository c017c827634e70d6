//! Checks over a relay's event log (one event JSON per line, arrival order).

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader};
use std::path::Path;

use crate::events::{is_job_request_kind, is_job_result_kind, FeedbackStatus, KIND_FEEDBACK, KIND_ZAP_RECEIPT};
use crate::nostr::Event;
use crate::payments::ZapReceipt;

pub fn read_event_log(path: &Path) -> std::io::Result<Vec<Event>> {
    let f = BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::new();
    for line in f.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(Event::from_json(&line).map_err(std::io::Error::other)?);
    }
    Ok(out)
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FlowReport {
    /// Requests that reached a result and were checked.
    pub jobs_checked: usize,
    pub violations: Vec<String>,
}

/// For every job request that got a result from its addressed provider,
/// checks that the log shows request, payment-required, receipt,
/// processing, success and result in that order. The two payment steps
/// are required only when the provider asked for payment.
pub fn check_flow_order(log: &[Event]) -> FlowReport {
    let mut report = FlowReport::default();
    for (req_at, req) in log.iter().enumerate() {
        if !is_job_request_kind(req.kind) {
            continue;
        }
        let Some(provider) = req.tag_value("p") else { continue };
        let refers = |e: &Event| e.tag_value("e") == Some(req.id.as_str());
        let from_provider = |e: &Event| e.pubkey == provider && refers(e);
        let feedback = |status: FeedbackStatus| {
            log.iter().position(|e| {
                e.kind == KIND_FEEDBACK && from_provider(e) && e.tag_value("status") == Some(status.as_wire())
            })
        };
        let Some(result_at) = log.iter().position(|e| is_job_result_kind(e.kind) && from_provider(e)) else {
            continue;
        };
        report.jobs_checked += 1;
        let short = &req.id[..12.min(req.id.len())];
        let mut steps: Vec<(&str, Option<usize>)> = vec![("request", Some(req_at))];
        if let Some(pr) = feedback(FeedbackStatus::PaymentRequired) {
            steps.push(("payment-required", Some(pr)));
            steps.push((
                "receipt",
                log.iter().position(|e| e.kind == KIND_ZAP_RECEIPT && refers(e)),
            ));
        }
        steps.push(("processing", feedback(FeedbackStatus::Processing)));
        steps.push(("success", feedback(FeedbackStatus::Success)));
        steps.push(("result", Some(result_at)));
        let mut last = None;
        for (name, at) in steps {
            match (at, last) {
                (None, _) => report.violations.push(format!("{short}: missing {name}")),
                (Some(a), Some((prev, prev_name))) if a <= prev => {
                    report.violations.push(format!("{short}: {name} before {prev_name}"))
                }
                (Some(a), _) => last = Some((a, name)),
            }
        }
    }
    report
}

/// Total invoiced msats per recipient over all receipts in the log.
pub fn receipted_msats(log: &[Event]) -> BTreeMap<String, u64> {
    let mut out = BTreeMap::new();
    for e in log.iter().filter(|e| e.kind == KIND_ZAP_RECEIPT) {
        if let Ok(r) = ZapReceipt::from_event(e) {
            *out.entry(r.recipient.clone()).or_default() += r.amount_msats().unwrap_or(0);
        }
    }
    out
}
