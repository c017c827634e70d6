//! NOSTR relay over websockets and the client side used by customers and
//! providers.
//!
//! Wire frames are JSON arrays: `EVENT`, `REQ` and `CLOSE` from clients;
//! `EVENT`, `OK`, `EOSE` and `NOTICE` from the relay.

mod client;
mod message;
mod pool;
mod server;
mod store;

pub use client::{client_connect, Ack, ClientError, RelayClient, SubItem, Subscription, DEFAULT_ACK_TIMEOUT};
pub use message::{ClientMessage, MessageError, RelayMessage};
pub use pool::{multi_relay_publish, MergedSubscription, PoolError, PublishOutcome, RelayPool, RelayReport};
pub use server::{relay_serve, RelayConfig, RelayHandle, DEFAULT_MAX_MESSAGE_BYTES};
pub use store::{is_addressable, InsertOutcome, RelayStore};
