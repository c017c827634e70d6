//! NOSTR identity, event construction and subscription filters.
//!
//! Events are identified by the SHA-256 digest of their canonical
//! serialization `[0, pubkey, created_at, kind, tags, content]` and signed
//! with BIP-340 Schnorr signatures over secp256k1 (x-only public keys).

mod event;
mod filter;
mod keys;

pub use event::{compute_event_id, sign_event, unix_now, verify_event, Event, EventTemplate};
pub use filter::{matches_filter, Filter};
pub use keys::{generate_keypair, Keypair};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum NostrError {
    #[error("invalid secret key scalar")]
    InvalidSecretKey,
    #[error("template pubkey {template} does not match signer {signer}")]
    PubkeyMismatch { template: String, signer: String },
    #[error("invalid template: {0}")]
    InvalidTemplate(String),
    #[error("invalid hex: {0}")]
    Hex(String),
    #[error("key file: {0}")]
    KeyFile(String),
}

/// Returns true if `s` is exactly `len` lowercase hex characters.
pub fn is_lower_hex(s: &str, len: usize) -> bool {
    s.len() == len && s.bytes().all(|b| matches!(b, b'0'..=b'9' | b'a'..=b'f'))
}
