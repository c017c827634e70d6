use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

/// What a round-log record marks. The first eight are slot phases; the
/// rest record payments and round boundaries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LogPhase {
    Requested,
    PaymentRequested,
    Paid,
    Processing,
    ResultReady,
    Validated,
    Failed,
    Reassigned,
    Settled,
    OuterApplied,
    RoundComplete,
}

/// One line of the round log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    /// Unix milliseconds.
    pub ts: u64,
    pub round: usize,
    pub provider: String,
    pub phase: LogPhase,
    pub event_id: String,
    pub detail: String,
}

/// In-memory round log, mirrored line by line to a file when configured.
#[derive(Debug, Default)]
pub struct RoundLog {
    records: Vec<LogRecord>,
    out: Option<File>,
}

impl RoundLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn to_file(path: &Path) -> std::io::Result<Self> {
        Ok(Self {
            records: Vec::new(),
            out: Some(File::create(path)?),
        })
    }

    pub fn push(&mut self, round: usize, provider: &str, phase: LogPhase, event_id: &str, detail: impl Into<String>) {
        let ts = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_millis() as u64)
            .unwrap_or(0);
        let rec = LogRecord {
            ts,
            round,
            provider: provider.to_string(),
            phase,
            event_id: event_id.to_string(),
            detail: detail.into(),
        };
        if let Some(f) = &mut self.out {
            let line = serde_json::to_string(&rec).expect("log record serializes");
            let _ = writeln!(f, "{line}").and_then(|_| f.flush());
        }
        self.records.push(rec);
    }

    pub fn records(&self) -> &[LogRecord] {
        &self.records
    }

    pub fn count(&self, phase: LogPhase) -> usize {
        self.records.iter().filter(|r| r.phase == phase).count()
    }
}

/// Reads a round log written by [`RoundLog::to_file`].
pub fn read_round_log(path: &Path) -> std::io::Result<Vec<LogRecord>> {
    let f = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for line in f.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(std::io::Error::other)?);
    }
    Ok(out)
}
