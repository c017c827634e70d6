use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::Write;
use std::path::Path;

use crate::nostr::{Event, Filter};

/// Addressable kinds: latest event per (pubkey, kind, d-tag) wins.
pub fn is_addressable(kind: u16) -> bool {
    (30000..40000).contains(&kind)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InsertOutcome {
    Stored,
    Duplicate,
    /// Stored, and displaced an older addressable event.
    Replaced,
    /// Addressable event older than the one already held; kept out of
    /// query results.
    Superseded,
}

impl InsertOutcome {
    /// Whether live subscribers should see this event.
    pub fn is_new(self) -> bool {
        matches!(self, InsertOutcome::Stored | InsertOutcome::Replaced)
    }
}

type AddressKey = (String, u16, String);

/// In-memory event store with optional append-only JSONL log of accepted
/// events in arrival order.
#[derive(Debug, Default)]
pub struct RelayStore {
    events: HashMap<String, Event>,
    arrival: Vec<String>,
    latest: HashMap<AddressKey, String>,
    log: Option<File>,
}

/// `a` is newer than `b`: later created_at, ties to the smaller id.
fn newer(a: &Event, b: &Event) -> bool {
    a.created_at > b.created_at || (a.created_at == b.created_at && a.id < b.id)
}

impl RelayStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_log_file(path: &Path) -> std::io::Result<Self> {
        let log = std::fs::OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self {
            log: Some(log),
            ..Self::default()
        })
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// Inserts an already-verified event.
    pub fn insert(&mut self, e: Event) -> InsertOutcome {
        if self.events.contains_key(&e.id) {
            return InsertOutcome::Duplicate;
        }
        let mut outcome = InsertOutcome::Stored;
        if is_addressable(e.kind) {
            let key = (e.pubkey.clone(), e.kind, e.d_tag().to_string());
            match self.latest.get(&key).and_then(|id| self.events.get(id)) {
                Some(cur) if !newer(&e, cur) => outcome = InsertOutcome::Superseded,
                Some(_) => {
                    self.latest.insert(key, e.id.clone());
                    outcome = InsertOutcome::Replaced;
                }
                None => {
                    self.latest.insert(key, e.id.clone());
                }
            }
        }
        if let Some(log) = &mut self.log {
            // the log is diagnostic; a failed write must not reject the event
            let _ = writeln!(log, "{}", e.to_json()).and_then(|_| log.flush());
        }
        self.arrival.push(e.id.clone());
        self.events.insert(e.id.clone(), e);
        outcome
    }

    fn visible(&self, e: &Event) -> bool {
        if !is_addressable(e.kind) {
            return true;
        }
        let key = (e.pubkey.clone(), e.kind, e.d_tag().to_string());
        self.latest.get(&key) == Some(&e.id)
    }

    /// Events matching any filter, newest first (ties by smaller id), each
    /// filter capped by its own limit.
    pub fn query(&self, filters: &[Filter]) -> Vec<Event> {
        let mut sorted: Vec<&Event> = self.events.values().filter(|e| self.visible(e)).collect();
        sorted.sort_by(|a, b| b.created_at.cmp(&a.created_at).then_with(|| a.id.cmp(&b.id)));
        let mut seen = HashSet::new();
        let mut out = Vec::new();
        for f in filters {
            let cap = f.limit.unwrap_or(usize::MAX);
            for e in sorted.iter().filter(|e| f.matches(e)).take(cap) {
                if seen.insert(e.id.as_str()) {
                    out.push(*e);
                }
            }
        }
        out.sort_by(|a, b| b.created_at.cmp(&a.created_at).then_with(|| a.id.cmp(&b.id)));
        out.into_iter().cloned().collect()
    }

    /// Every stored event in arrival order.
    pub fn arrival_order(&self) -> Vec<Event> {
        self.arrival.iter().filter_map(|id| self.events.get(id).cloned()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nostr::{generate_keypair, sign_event, EventTemplate, Keypair};

    fn ev(k: &Keypair, kind: u16, ts: u64, tags: Vec<Vec<String>>, content: &str) -> Event {
        sign_event(EventTemplate::new(k.public_key(), ts, kind, tags, content), k).unwrap()
    }

    #[test]
    fn dedup() {
        let k = generate_keypair(Some([1; 32])).unwrap();
        let e = ev(&k, 1, 5, vec![], "a");
        let mut s = RelayStore::new();
        assert_eq!(s.insert(e.clone()), InsertOutcome::Stored);
        assert_eq!(s.insert(e), InsertOutcome::Duplicate);
        assert_eq!(s.len(), 1);
    }

    #[test]
    fn addressable_keeps_newest() {
        let k = generate_keypair(Some([1; 32])).unwrap();
        let d = vec![vec!["d".to_string(), "x".to_string()]];
        let old = ev(&k, 31990, 100, d.clone(), "old");
        let new = ev(&k, 31990, 200, d.clone(), "new");
        let other_d = ev(&k, 31990, 50, vec![vec!["d".into(), "y".into()]], "y");
        let mut s = RelayStore::new();
        s.insert(old.clone());
        assert_eq!(s.insert(new.clone()), InsertOutcome::Replaced);
        s.insert(other_d.clone());
        let got = s.query(&[Filter::new().kinds([31990])]);
        assert_eq!(got, vec![new.clone(), other_d]);
        // arriving late does not resurrect the old one
        let mut s = RelayStore::new();
        s.insert(new.clone());
        assert_eq!(s.insert(old), InsertOutcome::Superseded);
        assert_eq!(s.query(&[Filter::new().kinds([31990])]), vec![new]);
    }

    #[test]
    fn addressable_tie_breaks_on_smaller_id() {
        let k = generate_keypair(Some([1; 32])).unwrap();
        let a = ev(&k, 31990, 100, vec![], "a");
        let b = ev(&k, 31990, 100, vec![], "b");
        let winner = if a.id < b.id { a.clone() } else { b.clone() };
        for order in [[a.clone(), b.clone()], [b, a]] {
            let mut s = RelayStore::new();
            for e in order {
                s.insert(e);
            }
            assert_eq!(s.query(&[Filter::new()]), vec![winner.clone()]);
        }
    }

    #[test]
    fn newest_first_with_limit() {
        let k = generate_keypair(Some([1; 32])).unwrap();
        let mut s = RelayStore::new();
        for ts in [3, 1, 4, 1, 5] {
            s.insert(ev(&k, 1, ts, vec![], &format!("{ts}-{}", s.len())));
        }
        let got: Vec<u64> = s.query(&[Filter::new().limit(3)]).iter().map(|e| e.created_at).collect();
        assert_eq!(got, vec![5, 4, 3]);
        assert_eq!(s.query(&[Filter::new()]).len(), 5);
    }

    #[test]
    fn log_file_records_arrival_order() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("relay.jsonl");
        let k = generate_keypair(Some([1; 32])).unwrap();
        let mut s = RelayStore::with_log_file(&path).unwrap();
        let a = ev(&k, 1, 9, vec![], "a");
        let b = ev(&k, 1, 1, vec![], "b");
        s.insert(a.clone());
        s.insert(b.clone());
        s.insert(a.clone());
        let lines: Vec<Event> = std::fs::read_to_string(&path)
            .unwrap()
            .lines()
            .map(|l| Event::from_json(l).unwrap())
            .collect();
        assert_eq!(lines, vec![a, b]);
    }
}
