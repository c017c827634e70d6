use std::collections::HashMap;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::{Arc, RwLock};

use futures_util::{SinkExt, StreamExt};
use tokio::net::{TcpListener, TcpStream};
use tokio::sync::{broadcast, watch};
use tokio::task::JoinHandle;
use tokio_tungstenite::tungstenite::protocol::WebSocketConfig;
use tokio_tungstenite::tungstenite::Message;
use tracing::{debug, warn};

use super::message::{ClientMessage, RelayMessage};
use super::store::RelayStore;
use crate::nostr::{verify_event, Event, Filter};

/// Largest accepted client frame.
pub const DEFAULT_MAX_MESSAGE_BYTES: usize = 512 * 1024;

#[derive(Debug, Clone)]
pub struct RelayConfig {
    pub max_message_bytes: usize,
    pub log_file: Option<PathBuf>,
}

impl Default for RelayConfig {
    fn default() -> Self {
        Self {
            max_message_bytes: DEFAULT_MAX_MESSAGE_BYTES,
            log_file: None,
        }
    }
}

type SharedStore = Arc<RwLock<RelayStore>>;

/// A running relay. Dropping the handle stops it.
#[derive(Debug)]
pub struct RelayHandle {
    addr: SocketAddr,
    store: SharedStore,
    shutdown: watch::Sender<bool>,
    task: Option<JoinHandle<()>>,
}

impl RelayHandle {
    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn url(&self) -> String {
        format!("ws://{}", self.addr)
    }

    /// Stored events in arrival order.
    pub fn events(&self) -> Vec<Event> {
        self.store.read().expect("relay store lock").arrival_order()
    }

    pub async fn shutdown(mut self) {
        let _ = self.shutdown.send(true);
        if let Some(t) = self.task.take() {
            let _ = t.await;
        }
    }
}

impl Drop for RelayHandle {
    fn drop(&mut self) {
        let _ = self.shutdown.send(true);
    }
}

/// Binds `addr` and serves the NOSTR wire protocol until the handle is
/// shut down or dropped.
pub async fn relay_serve(addr: &str, config: RelayConfig) -> std::io::Result<RelayHandle> {
    let store = match &config.log_file {
        Some(p) => RelayStore::with_log_file(p)?,
        None => RelayStore::new(),
    };
    let store: SharedStore = Arc::new(RwLock::new(store));
    let listener = TcpListener::bind(addr).await?;
    let addr = listener.local_addr()?;
    let (shutdown, mut stop) = watch::channel(false);
    let (live, _) = broadcast::channel::<Arc<Event>>(8192);
    let shared = store.clone();
    let task = tokio::spawn(async move {
        let mut sessions = Vec::new();
        loop {
            tokio::select! {
                _ = stop.changed() => break,
                accepted = listener.accept() => match accepted {
                    Ok((stream, peer)) => {
                        debug!(%peer, "relay session");
                        sessions.push(tokio::spawn(session(
                            stream,
                            shared.clone(),
                            live.clone(),
                            config.max_message_bytes,
                            stop.clone(),
                        )));
                        sessions.retain(|s: &JoinHandle<()>| !s.is_finished());
                    }
                    Err(e) => warn!("accept failed: {e}"),
                },
            }
        }
        for s in sessions {
            s.abort();
        }
    });
    Ok(RelayHandle {
        addr,
        store,
        shutdown,
        task: Some(task),
    })
}

async fn session(
    stream: TcpStream,
    store: SharedStore,
    live: broadcast::Sender<Arc<Event>>,
    max_bytes: usize,
    mut stop: watch::Receiver<bool>,
) {
    let mut cfg = WebSocketConfig::default();
    // frames above the protocol limit are still read so the client gets a
    // proper rejection instead of a dropped connection
    cfg.max_message_size = Some(max_bytes.saturating_mul(4));
    cfg.max_frame_size = Some(max_bytes.saturating_mul(4));
    let ws = match tokio_tungstenite::accept_async_with_config(stream, Some(cfg)).await {
        Ok(ws) => ws,
        Err(e) => {
            debug!("handshake failed: {e}");
            return;
        }
    };
    let (mut sink, mut source) = ws.split();
    let mut feed = live.subscribe();
    let mut subs: HashMap<String, Vec<Filter>> = HashMap::new();
    loop {
        let mut out = Vec::new();
        tokio::select! {
            _ = stop.changed() => break,
            incoming = source.next() => {
                let text = match incoming {
                    Some(Ok(Message::Text(t))) => t,
                    Some(Ok(Message::Binary(_))) => {
                        out.push(RelayMessage::Notice("binary frames are not supported".into()));
                        String::new()
                    }
                    Some(Ok(Message::Close(_))) | None => break,
                    Some(Ok(_)) => continue,
                    Some(Err(e)) => {
                        debug!("session read error: {e}");
                        break;
                    }
                };
                if !text.is_empty() {
                    handle_frame(&text, max_bytes, &store, &live, &mut subs, &mut out);
                }
            }
            ev = feed.recv() => match ev {
                Ok(e) => {
                    for (id, filters) in &subs {
                        if filters.iter().any(|f| f.matches(&e)) {
                            out.push(RelayMessage::Event { sub_id: id.clone(), event: (*e).clone() });
                        }
                    }
                }
                Err(broadcast::error::RecvError::Lagged(n)) => {
                    out.push(RelayMessage::Notice(format!("dropped {n} live events")));
                }
                Err(broadcast::error::RecvError::Closed) => break,
            },
        }
        for m in out {
            if sink.send(Message::Text(m.to_json())).await.is_err() {
                return;
            }
        }
    }
    let _ = sink.close().await;
}

fn handle_frame(
    text: &str,
    max_bytes: usize,
    store: &SharedStore,
    live: &broadcast::Sender<Arc<Event>>,
    subs: &mut HashMap<String, Vec<Filter>>,
    out: &mut Vec<RelayMessage>,
) {
    let msg = match ClientMessage::from_json(text) {
        Ok(m) => m,
        Err(e) => {
            out.push(RelayMessage::Notice(e.to_string()));
            return;
        }
    };
    match msg {
        ClientMessage::Event(e) => {
            let reject = |reason: &str| RelayMessage::Ok {
                event_id: e.id.clone(),
                accepted: false,
                message: reason.to_string(),
            };
            if text.len() > max_bytes {
                out.push(reject("invalid: message too large"));
                return;
            }
            if !verify_event(&e) {
                out.push(reject("invalid: signature"));
                return;
            }
            let outcome = store.write().expect("relay store lock").insert(e.clone());
            let message = match outcome {
                super::store::InsertOutcome::Duplicate => "duplicate: already have this event",
                super::store::InsertOutcome::Superseded => "duplicate: newer version stored",
                _ => "",
            };
            out.push(RelayMessage::Ok {
                event_id: e.id.clone(),
                accepted: true,
                message: message.into(),
            });
            if outcome.is_new() {
                let _ = live.send(Arc::new(e));
            }
        }
        ClientMessage::Req { sub_id, filters } => {
            if text.len() > max_bytes {
                out.push(RelayMessage::Notice("message too large".into()));
                return;
            }
            let stored = store.read().expect("relay store lock").query(&filters);
            out.extend(stored.into_iter().map(|event| RelayMessage::Event {
                sub_id: sub_id.clone(),
                event,
            }));
            out.push(RelayMessage::Eose(sub_id.clone()));
            subs.insert(sub_id, filters);
        }
        ClientMessage::Close(id) => {
            subs.remove(&id);
        }
    }
}
