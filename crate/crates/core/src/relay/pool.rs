use std::collections::HashSet;

use tokio::sync::mpsc;

use super::client::{Ack, ClientError, RelayClient, SubItem};
use crate::nostr::{Event, Filter};

/// Per-relay result of a fan-out publish.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PublishOutcome {
    Accepted(Ack),
    Rejected(Ack),
    Transport(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RelayReport {
    pub url: String,
    pub outcome: PublishOutcome,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PoolError {
    #[error("no relay accepted the event: {}", summarize(.0))]
    AllRejected(Vec<RelayReport>),
    #[error("no relay reachable")]
    NoRelays,
}

fn summarize(r: &[RelayReport]) -> String {
    r.iter()
        .map(|x| match &x.outcome {
            PublishOutcome::Accepted(_) => format!("{}: accepted", x.url),
            PublishOutcome::Rejected(a) => format!("{}: {}", x.url, a.message),
            PublishOutcome::Transport(e) => format!("{}: {e}", x.url),
        })
        .collect::<Vec<_>>()
        .join("; ")
}

/// A set of relay sessions used together. Relays that could not be
/// reached at connect time are remembered and reported on publish.
#[derive(Debug, Clone)]
pub struct RelayPool {
    relays: Vec<(String, Result<RelayClient, ClientError>)>,
}

impl RelayPool {
    pub async fn connect(urls: &[String]) -> Self {
        let mut relays = Vec::new();
        for u in urls {
            relays.push((u.clone(), RelayClient::connect(u).await));
        }
        Self { relays }
    }

    pub fn from_clients(clients: Vec<RelayClient>) -> Self {
        Self {
            relays: clients.into_iter().map(|c| (c.url().to_string(), Ok(c))).collect(),
        }
    }

    pub fn urls(&self) -> Vec<String> {
        self.relays.iter().map(|(u, _)| u.clone()).collect()
    }

    pub fn connected(&self) -> usize {
        self.relays
            .iter()
            .filter(|(_, c)| c.as_ref().is_ok_and(|c| !c.is_closed()))
            .count()
    }

    /// Best-effort fan-out; succeeds iff at least one relay accepted.
    pub async fn publish(&self, e: &Event) -> Result<Vec<RelayReport>, PoolError> {
        if self.relays.is_empty() {
            return Err(PoolError::NoRelays);
        }
        let futures = self.relays.iter().map(|(url, c)| async move {
            let outcome = match c {
                Err(e) => PublishOutcome::Transport(e.to_string()),
                Ok(c) => match c.publish(e).await {
                    Ok(a) if a.accepted => PublishOutcome::Accepted(a),
                    Ok(a) => PublishOutcome::Rejected(a),
                    Err(err) => PublishOutcome::Transport(err.to_string()),
                },
            };
            RelayReport { url: url.clone(), outcome }
        });
        let reports = futures_util::future::join_all(futures).await;
        if reports.iter().any(|r| matches!(r.outcome, PublishOutcome::Accepted(_))) {
            Ok(reports)
        } else {
            Err(PoolError::AllRejected(reports))
        }
    }

    /// One subscription across every connected relay, deduplicated by
    /// event id. `EndOfStored` arrives once every relay has sent its
    /// marker (or dropped); `Disconnected` once every relay has dropped.
    pub async fn subscribe(&self, filters: Vec<Filter>) -> Result<MergedSubscription, PoolError> {
        let (tx, rx) = mpsc::unbounded_channel();
        let mut sources = 0;
        for (_, c) in &self.relays {
            let Ok(c) = c else { continue };
            let Ok(mut sub) = c.subscribe(filters.clone()).await else { continue };
            sources += 1;
            let tx = tx.clone();
            tokio::spawn(async move {
                while let Some(item) = sub.recv().await {
                    if tx.send(item).is_err() {
                        break;
                    }
                }
            });
        }
        if sources == 0 {
            return Err(PoolError::NoRelays);
        }
        Ok(MergedSubscription {
            rx,
            seen: HashSet::new(),
            sources,
            eose: 0,
            gone: 0,
            eose_sent: false,
        })
    }
}

/// Convenience wrapper matching the fan-out operation over existing sessions.
pub async fn multi_relay_publish(sessions: &[RelayClient], e: &Event) -> Result<Vec<RelayReport>, PoolError> {
    RelayPool::from_clients(sessions.to_vec()).publish(e).await
}

#[derive(Debug)]
pub struct MergedSubscription {
    rx: mpsc::UnboundedReceiver<SubItem>,
    seen: HashSet<String>,
    sources: usize,
    eose: usize,
    gone: usize,
    eose_sent: bool,
}

impl MergedSubscription {
    pub async fn recv(&mut self) -> Option<SubItem> {
        loop {
            if self.gone == self.sources {
                return None;
            }
            let item = match self.rx.recv().await {
                Some(i) => i,
                None => {
                    self.gone = self.sources;
                    return Some(SubItem::Disconnected);
                }
            };
            match item {
                SubItem::Event(e) => {
                    if self.seen.insert(e.id.clone()) {
                        return Some(SubItem::Event(e));
                    }
                }
                SubItem::EndOfStored => {
                    self.eose += 1;
                    if let Some(i) = self.maybe_eose() {
                        return Some(i);
                    }
                }
                SubItem::Disconnected => {
                    self.gone += 1;
                    if self.gone == self.sources {
                        return Some(SubItem::Disconnected);
                    }
                    if let Some(i) = self.maybe_eose() {
                        return Some(i);
                    }
                }
            }
        }
    }

    fn maybe_eose(&mut self) -> Option<SubItem> {
        if !self.eose_sent && self.eose + self.gone >= self.sources {
            self.eose_sent = true;
            return Some(SubItem::EndOfStored);
        }
        None
    }

    pub async fn stored(&mut self) -> Vec<Event> {
        let mut out = Vec::new();
        while let Some(item) = self.recv().await {
            match item {
                SubItem::Event(e) => out.push(e),
                _ => break,
            }
        }
        out
    }
}
