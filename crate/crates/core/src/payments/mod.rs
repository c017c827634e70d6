//! Zap requests (kind 9734), receipts (kind 9735) and receipt validation
//! over a stubbed Lightning layer. Invoices are `lnstub1<msats>m<hash>`
//! strings and are not interoperable with real Lightning.

mod bolt11;
mod receipt;
mod request;

pub use bolt11::Bolt11Stub;
pub use receipt::{
    stub_pay, validate_receipt, AlwaysSettled, ExpectedPayment, ReceiptCheck, SettlementCheck,
    StubNode, StubPayment, ZapReceipt,
};
pub use request::{create_zap_request, stub_lnurl, ZapRequest};

use thiserror::Error;

use crate::events::EventError;
use crate::nostr::NostrError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PaymentError {
    #[error("amount must be positive")]
    ZeroAmount,
    #[error("invalid invoice: {0}")]
    Invoice(String),
    #[error(transparent)]
    Event(#[from] EventError),
    #[error(transparent)]
    Nostr(#[from] NostrError),
}
