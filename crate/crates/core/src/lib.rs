//! Federated learning and low-communication training marketplace over NOSTR.
pub mod audit;
pub mod customer;
pub mod demo;
pub mod events;
pub mod job;
pub mod market;
pub mod ml;
pub mod nostr;
pub mod payments;
pub mod provider;
pub mod relay;
pub mod store;
pub mod validation;
