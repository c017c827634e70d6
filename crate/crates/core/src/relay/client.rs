use std::collections::HashMap;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use futures_util::{SinkExt, StreamExt};
use tokio::sync::{mpsc, oneshot};
use tokio_tungstenite::tungstenite::Message;
use tracing::{debug, warn};

use super::message::{ClientMessage, RelayMessage};
use crate::nostr::{verify_event, Event, Filter};

/// How long a publish waits for the relay's OK.
pub const DEFAULT_ACK_TIMEOUT: Duration = Duration::from_secs(10);

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ClientError {
    #[error("connect to {url} failed: {reason}")]
    Connect { url: String, reason: String },
    #[error("session closed")]
    Closed,
    #[error("no OK from relay within {0:?}")]
    AckTimeout(Duration),
}

/// The relay's verdict on a published event.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Ack {
    pub event_id: String,
    pub accepted: bool,
    pub message: String,
}

/// Items yielded by a subscription: stored events, then the end-of-stored
/// marker, then live events. `Disconnected` is final.
#[derive(Debug, Clone, PartialEq)]
pub enum SubItem {
    Event(Event),
    EndOfStored,
    Disconnected,
}

enum Command {
    Send(String),
    Publish(Event, oneshot::Sender<Ack>),
    Subscribe(String, Vec<Filter>, mpsc::UnboundedSender<SubItem>),
    Close(String),
}

/// Handle to one relay session. Cheap to clone; all clones share the
/// connection.
#[derive(Clone)]
pub struct RelayClient {
    url: Arc<str>,
    commands: mpsc::UnboundedSender<Command>,
    closed: Arc<AtomicBool>,
    next_sub: Arc<AtomicU64>,
    ack_timeout: Duration,
}

impl std::fmt::Debug for RelayClient {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RelayClient").field("url", &self.url).finish()
    }
}

pub async fn client_connect(url: &str) -> Result<RelayClient, ClientError> {
    RelayClient::connect(url).await
}

impl RelayClient {
    pub async fn connect(url: &str) -> Result<Self, ClientError> {
        let (ws, _) = tokio_tungstenite::connect_async(url).await.map_err(|e| ClientError::Connect {
            url: url.to_string(),
            reason: e.to_string(),
        })?;
        let (tx, rx) = mpsc::unbounded_channel();
        let closed = Arc::new(AtomicBool::new(false));
        tokio::spawn(drive(ws, rx, closed.clone(), url.to_string()));
        Ok(Self {
            url: url.into(),
            commands: tx,
            closed,
            next_sub: Arc::new(AtomicU64::new(0)),
            ack_timeout: DEFAULT_ACK_TIMEOUT,
        })
    }

    pub fn with_ack_timeout(mut self, t: Duration) -> Self {
        self.ack_timeout = t;
        self
    }

    pub fn url(&self) -> &str {
        &self.url
    }

    pub fn is_closed(&self) -> bool {
        self.closed.load(Ordering::SeqCst)
    }

    /// Publishes `e` and waits for the relay's OK.
    pub async fn publish(&self, e: &Event) -> Result<Ack, ClientError> {
        if self.is_closed() {
            return Err(ClientError::Closed);
        }
        let (tx, rx) = oneshot::channel();
        self.commands
            .send(Command::Publish(e.clone(), tx))
            .map_err(|_| ClientError::Closed)?;
        match tokio::time::timeout(self.ack_timeout, rx).await {
            Ok(Ok(ack)) => Ok(ack),
            Ok(Err(_)) => Err(ClientError::Closed),
            Err(_) => Err(ClientError::AckTimeout(self.ack_timeout)),
        }
    }

    /// Opens a subscription. Events whose signature does not verify are
    /// dropped before delivery.
    pub async fn subscribe(&self, filters: Vec<Filter>) -> Result<Subscription, ClientError> {
        if self.is_closed() {
            return Err(ClientError::Closed);
        }
        let id = format!("sub{}", self.next_sub.fetch_add(1, Ordering::SeqCst));
        let (tx, rx) = mpsc::unbounded_channel();
        self.commands
            .send(Command::Subscribe(id.clone(), filters, tx))
            .map_err(|_| ClientError::Closed)?;
        Ok(Subscription {
            id,
            items: rx,
            commands: self.commands.clone(),
            done: false,
        })
    }

    /// Sends a raw text frame; used to exercise relay error paths.
    pub fn send_raw(&self, text: impl Into<String>) -> Result<(), ClientError> {
        self.commands.send(Command::Send(text.into())).map_err(|_| ClientError::Closed)
    }

    /// Closes the connection for every clone of this handle.
    pub fn disconnect(&self) {
        self.closed.store(true, Ordering::SeqCst);
        let _ = self.commands.send(Command::Send(String::new()));
    }
}

/// A live subscription. Dropping it sends CLOSE.
#[derive(Debug)]
pub struct Subscription {
    id: String,
    items: mpsc::UnboundedReceiver<SubItem>,
    commands: mpsc::UnboundedSender<Command>,
    done: bool,
}

impl std::fmt::Debug for Command {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("Command")
    }
}

impl Subscription {
    pub fn id(&self) -> &str {
        &self.id
    }

    /// Next item; after `Disconnected` every call returns `None`.
    pub async fn recv(&mut self) -> Option<SubItem> {
        if self.done {
            return None;
        }
        let item = self.items.recv().await.unwrap_or(SubItem::Disconnected);
        if item == SubItem::Disconnected {
            self.done = true;
        }
        Some(item)
    }

    /// Collects stored events up to the end-of-stored marker.
    pub async fn stored(&mut self) -> Vec<Event> {
        let mut out = Vec::new();
        while let Some(item) = self.recv().await {
            match item {
                SubItem::Event(e) => out.push(e),
                SubItem::EndOfStored | SubItem::Disconnected => break,
            }
        }
        out
    }
}

impl Drop for Subscription {
    fn drop(&mut self) {
        let _ = self.commands.send(Command::Close(self.id.clone()));
    }
}

async fn drive(
    ws: tokio_tungstenite::WebSocketStream<tokio_tungstenite::MaybeTlsStream<tokio::net::TcpStream>>,
    mut commands: mpsc::UnboundedReceiver<Command>,
    closed: Arc<AtomicBool>,
    url: String,
) {
    let (mut sink, mut source) = ws.split();
    let mut pending: HashMap<String, Vec<oneshot::Sender<Ack>>> = HashMap::new();
    let mut subs: HashMap<String, mpsc::UnboundedSender<SubItem>> = HashMap::new();
    loop {
        tokio::select! {
            cmd = commands.recv() => {
                let frame = match cmd {
                    None => break,
                    Some(Command::Send(t)) if t.is_empty() => break,
                    Some(Command::Send(t)) => t,
                    Some(Command::Publish(e, ack)) => {
                        pending.entry(e.id.clone()).or_default().push(ack);
                        ClientMessage::Event(e).to_json()
                    }
                    Some(Command::Subscribe(id, filters, tx)) => {
                        subs.insert(id.clone(), tx);
                        ClientMessage::Req { sub_id: id, filters }.to_json()
                    }
                    Some(Command::Close(id)) => {
                        if subs.remove(&id).is_none() {
                            continue;
                        }
                        ClientMessage::Close(id).to_json()
                    }
                };
                if sink.send(Message::Text(frame)).await.is_err() {
                    break;
                }
            }
            msg = source.next() => {
                let text = match msg {
                    Some(Ok(Message::Text(t))) => t,
                    Some(Ok(Message::Close(_))) | None | Some(Err(_)) => break,
                    Some(Ok(_)) => continue,
                };
                match RelayMessage::from_json(&text) {
                    Ok(RelayMessage::Event { sub_id, event }) => {
                        if !verify_event(&event) {
                            warn!(relay = %url, id = %event.id, "dropping event with bad signature");
                            continue;
                        }
                        if let Some(tx) = subs.get(&sub_id) {
                            let _ = tx.send(SubItem::Event(event));
                        }
                    }
                    Ok(RelayMessage::Eose(sub_id)) => {
                        if let Some(tx) = subs.get(&sub_id) {
                            let _ = tx.send(SubItem::EndOfStored);
                        }
                    }
                    Ok(RelayMessage::Ok { event_id, accepted, message }) => {
                        if let Some(waiters) = pending.remove(&event_id) {
                            for w in waiters {
                                let _ = w.send(Ack { event_id: event_id.clone(), accepted, message: message.clone() });
                            }
                        }
                    }
                    Ok(RelayMessage::Notice(n)) => debug!(relay = %url, "notice: {n}"),
                    Err(e) => debug!(relay = %url, "unparseable relay frame: {e}"),
                }
            }
        }
    }
    closed.store(true, Ordering::SeqCst);
    for (_, tx) in subs {
        let _ = tx.send(SubItem::Disconnected);
    }
    let _ = sink.close().await;
}
