use std::collections::HashSet;
use std::time::Duration;

use crate::events::{parse_discoverability, KIND_DISCOVERABILITY};
use crate::nostr::Filter;
use crate::payments::stub_lnurl;
use crate::relay::RelayPool;

use super::CustomerError;

/// A provider found through its announcement.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DiscoveredProvider {
    pub pubkey: String,
    pub lnurl: String,
    pub announced_at: u64,
}

/// Queries announcements for `kind` and returns up to `needed` distinct
/// providers not in `exclude`: those named in `prefer` first (in that
/// order), then newest announcements first. Retries until `window`
/// elapses before reporting a shortfall.
pub async fn discover_providers(
    pool: &RelayPool,
    needed: usize,
    kind: u16,
    exclude: &HashSet<String>,
    prefer: &[String],
    window: Duration,
) -> Result<Vec<DiscoveredProvider>, CustomerError> {
    let deadline = tokio::time::Instant::now() + window;
    loop {
        let found = query(pool, kind, exclude, prefer).await?;
        if found.len() >= needed {
            return Ok(found.into_iter().take(needed).collect());
        }
        if tokio::time::Instant::now() >= deadline {
            return Err(CustomerError::InsufficientProviders {
                found: found.len(),
                needed,
            });
        }
        tokio::time::sleep(Duration::from_millis(200)).await;
    }
}

async fn query(
    pool: &RelayPool,
    kind: u16,
    exclude: &HashSet<String>,
    prefer: &[String],
) -> Result<Vec<DiscoveredProvider>, CustomerError> {
    let filter = Filter::new().kinds([KIND_DISCOVERABILITY]).tag('k', [kind.to_string()]);
    let mut sub = pool.subscribe(vec![filter]).await?;
    let mut events = sub.stored().await;
    events.sort_by(|a, b| b.created_at.cmp(&a.created_at).then_with(|| a.id.cmp(&b.id)));
    let rank = |pk: &str| prefer.iter().position(|p| p == pk).unwrap_or(usize::MAX);
    let mut seen = HashSet::new();
    let mut out: Vec<DiscoveredProvider> = Vec::new();
    for e in events {
        let Ok(d) = parse_discoverability(&e) else { continue };
        if !d.supports(kind) || exclude.contains(&e.pubkey) || !seen.insert(e.pubkey.clone()) {
            continue;
        }
        out.push(DiscoveredProvider {
            lnurl: d.lnurl.unwrap_or_else(|| stub_lnurl(&e.pubkey)),
            pubkey: e.pubkey,
            announced_at: e.created_at,
        });
    }
    // stable: ties keep newest-first order
    out.sort_by_key(|p| rank(&p.pubkey));
    Ok(out)
}
