use std::sync::Mutex;

use rand::RngCore;
use sha2::{Digest, Sha256};

use crate::events::{EventError, KIND_ZAP_RECEIPT, KIND_ZAP_REQUEST};
use crate::nostr::{sign_event, unix_now, verify_event, Event, EventTemplate, Keypair};

use super::{Bolt11Stub, PaymentError, ZapRequest};

/// Parsed kind-9735 receipt.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ZapReceipt {
    pub recipient: String,
    pub sender: Option<String>,
    pub event_id: Option<String>,
    pub bolt11: String,
    /// JSON of the embedded zap request event.
    pub description: String,
    pub preimage: Option<String>,
    pub paid_at: u64,
}

impl ZapReceipt {
    pub fn from_event(e: &Event) -> Result<Self, EventError> {
        if e.kind != KIND_ZAP_RECEIPT {
            return Err(EventError::WrongKind {
                expected: KIND_ZAP_RECEIPT.to_string(),
                got: e.kind,
            });
        }
        let need = |n: &str| e.tag_value(n).ok_or_else(|| EventError::MissingTag(n.into()));
        Ok(ZapReceipt {
            recipient: need("p")?.to_string(),
            sender: e.tag_value("P").map(str::to_string),
            event_id: e.tag_value("e").map(str::to_string),
            bolt11: need("bolt11")?.to_string(),
            description: need("description")?.to_string(),
            preimage: e.tag_value("preimage").map(str::to_string),
            paid_at: e.created_at,
        })
    }

    /// The embedded zap request, if it is a well-formed, validly signed
    /// kind-9734 event.
    pub fn zap_request(&self) -> Option<(Event, ZapRequest)> {
        let ev = Event::from_json(&self.description).ok()?;
        if ev.kind != KIND_ZAP_REQUEST || !verify_event(&ev) {
            return None;
        }
        let req = ZapRequest::from_event(&ev).ok()?;
        Some((ev, req))
    }

    pub fn amount_msats(&self) -> Option<u64> {
        self.bolt11.parse::<Bolt11Stub>().ok().map(|b| b.amount_msats)
    }
}

/// Payer-side stub Lightning node. Receipts it mints are signed with its
/// keypair and carry non-decreasing `paid_at` timestamps.
#[derive(Debug)]
pub struct StubNode {
    keys: Keypair,
    last_paid_at: Mutex<u64>,
}

impl StubNode {
    pub fn new(keys: Keypair) -> Self {
        Self {
            keys,
            last_paid_at: Mutex::new(0),
        }
    }

    pub fn public_key(&self) -> &str {
        self.keys.public_key()
    }
}

/// A minted receipt and the relays it must be published to.
#[derive(Debug, Clone)]
pub struct StubPayment {
    pub receipt: Event,
    pub relays: Vec<String>,
    pub amount_msats: u64,
}

/// Pays a signed zap request: mints an invoice for its amount and returns
/// a kind-9735 receipt embedding the request as its description.
pub fn stub_pay(zap_request: &Event, node: &StubNode) -> Result<StubPayment, PaymentError> {
    if !verify_event(zap_request) {
        return Err(PaymentError::Invoice("zap request signature does not verify".into()));
    }
    let req = ZapRequest::from_event(zap_request)?;
    if req.amount_msats == 0 {
        return Err(PaymentError::ZeroAmount);
    }
    let mut preimage = [0u8; 32];
    rand::thread_rng().fill_bytes(&mut preimage);
    let digest = Sha256::digest(preimage);
    let mut payment_hash = [0u8; 8];
    payment_hash.copy_from_slice(&digest[..8]);
    let bolt11 = Bolt11Stub {
        amount_msats: req.amount_msats,
        payment_hash,
    };
    let mut tags = vec![
        vec!["p".to_string(), req.recipient.clone()],
        vec!["P".to_string(), zap_request.pubkey.clone()],
    ];
    if let Some(e) = &req.event_id {
        tags.push(vec!["e".into(), e.clone()]);
    }
    tags.push(vec!["bolt11".into(), bolt11.to_string()]);
    tags.push(vec!["description".into(), zap_request.to_json()]);
    tags.push(vec!["preimage".into(), hex::encode(preimage)]);
    let paid_at = {
        let mut last = node.last_paid_at.lock().expect("stub node lock poisoned");
        *last = unix_now().max(*last);
        *last
    };
    let t = EventTemplate::new(node.keys.public_key(), paid_at, KIND_ZAP_RECEIPT, tags, "");
    Ok(StubPayment {
        receipt: sign_event(t, &node.keys)?,
        relays: req.relays,
        amount_msats: req.amount_msats,
    })
}

/// What the recipient expects to have been paid.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExpectedPayment {
    pub recipient: String,
    pub lnurl: String,
    /// When set, the invoice must be for exactly this amount.
    pub amount_msats: Option<u64>,
    /// When set, the receipt must reference this event.
    pub event_id: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ReceiptCheck {
    Pass,
    Fail(String),
}

impl ReceiptCheck {
    pub fn is_pass(&self) -> bool {
        matches!(self, ReceiptCheck::Pass)
    }
}

/// Final settlement check against a node or payment processor. A receipt
/// proves only that someone fetched an invoice.
pub trait SettlementCheck: Send + Sync {
    fn is_settled(&self, receipt: &ZapReceipt) -> bool;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct AlwaysSettled;

impl SettlementCheck for AlwaysSettled {
    fn is_settled(&self, _receipt: &ZapReceipt) -> bool {
        true
    }
}

/// Recipient match, invoice amount equal to the request amount, and lnurl
/// equal to the recipient's, followed by the settlement hook.
pub fn validate_receipt(receipt: &Event, expected: &ExpectedPayment, settlement: &dyn SettlementCheck) -> ReceiptCheck {
    let fail = |m: &str| ReceiptCheck::Fail(m.to_string());
    if !verify_event(receipt) {
        return fail("bad receipt signature");
    }
    let r = match ZapReceipt::from_event(receipt) {
        Ok(r) => r,
        Err(e) => return ReceiptCheck::Fail(format!("malformed receipt: {e}")),
    };
    let Some((_, req)) = r.zap_request() else {
        return fail("malformed description");
    };
    if r.recipient != expected.recipient || req.recipient != expected.recipient {
        return fail("recipient mismatch");
    }
    let Some(invoiced) = r.amount_msats() else {
        return fail("malformed bolt11");
    };
    if invoiced != req.amount_msats {
        return fail("amount mismatch");
    }
    if expected.amount_msats.is_some_and(|a| a != invoiced) {
        return fail("amount differs from price");
    }
    if req.lnurl != expected.lnurl {
        return fail("lnurl mismatch");
    }
    if let Some(e) = &expected.event_id {
        if r.event_id.as_ref() != Some(e) || req.event_id.as_ref() != Some(e) {
            return fail("event mismatch");
        }
    }
    if !settlement.is_settled(&r) {
        return fail("not settled");
    }
    ReceiptCheck::Pass
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nostr::generate_keypair;
    use crate::payments::{create_zap_request, stub_lnurl};

    struct Fixture {
        customer: Keypair,
        node: StubNode,
        provider: Keypair,
    }

    fn fixture() -> Fixture {
        Fixture {
            customer: generate_keypair(Some([1; 32])).unwrap(),
            node: StubNode::new(generate_keypair(Some([2; 32])).unwrap()),
            provider: generate_keypair(Some([3; 32])).unwrap(),
        }
    }

    fn expected(f: &Fixture) -> ExpectedPayment {
        ExpectedPayment {
            recipient: f.provider.public_key().to_string(),
            lnurl: stub_lnurl(f.provider.public_key()),
            amount_msats: Some(1000),
            event_id: Some("ee".repeat(32)),
        }
    }

    fn pay(f: &Fixture) -> StubPayment {
        let zr = create_zap_request(
            1000,
            &stub_lnurl(f.provider.public_key()),
            f.provider.public_key(),
            Some(&"ee".repeat(32)),
            &["ws://r1".into(), "ws://r2".into()],
            &f.customer,
        )
        .unwrap();
        stub_pay(&zr, &f.node).unwrap()
    }

    /// Re-signs a receipt after `edit` mutates its tags.
    fn mutate(f: &Fixture, receipt: &Event, edit: impl Fn(&mut Vec<Vec<String>>)) -> Event {
        let mut t = receipt.template();
        edit(&mut t.tags);
        sign_event(t, &f.node.keys).unwrap()
    }

    #[test]
    fn matching_receipt_passes() {
        let f = fixture();
        let p = pay(&f);
        assert_eq!(p.relays, vec!["ws://r1".to_string(), "ws://r2".to_string()]);
        let r = ZapReceipt::from_event(&p.receipt).unwrap();
        assert_eq!(r.amount_msats(), Some(1000));
        let (_, req) = r.zap_request().unwrap();
        assert_eq!(req.amount_msats, 1000);
        assert_eq!(req.recipient, f.provider.public_key());
        assert_eq!(validate_receipt(&p.receipt, &expected(&f), &AlwaysSettled), ReceiptCheck::Pass);
    }

    #[test]
    fn bolt11_amount_differs_from_request() {
        let f = fixture();
        let p = pay(&f);
        let bad = mutate(&f, &p.receipt, |tags| {
            for t in tags.iter_mut() {
                if t[0] == "bolt11" {
                    t[1] = "lnstub1900m0011223344556677".into();
                }
            }
        });
        assert_eq!(
            validate_receipt(&bad, &expected(&f), &AlwaysSettled),
            ReceiptCheck::Fail("amount mismatch".into())
        );
    }

    #[test]
    fn recipient_altered() {
        let f = fixture();
        let p = pay(&f);
        let bad = mutate(&f, &p.receipt, |tags| tags[0][1] = "ff".repeat(32));
        assert_eq!(
            validate_receipt(&bad, &expected(&f), &AlwaysSettled),
            ReceiptCheck::Fail("recipient mismatch".into())
        );
    }

    #[test]
    fn lnurl_altered() {
        let f = fixture();
        let zr = create_zap_request(1000, "lnurlother", f.provider.public_key(), Some(&"ee".repeat(32)), &[], &f.customer).unwrap();
        let p = stub_pay(&zr, &f.node).unwrap();
        assert_eq!(
            validate_receipt(&p.receipt, &expected(&f), &AlwaysSettled),
            ReceiptCheck::Fail("lnurl mismatch".into())
        );
    }

    #[test]
    fn unparseable_description() {
        let f = fixture();
        let p = pay(&f);
        let bad = mutate(&f, &p.receipt, |tags| {
            for t in tags.iter_mut() {
                if t[0] == "description" {
                    t[1] = "{not json".into();
                }
            }
        });
        assert_eq!(
            validate_receipt(&bad, &expected(&f), &AlwaysSettled),
            ReceiptCheck::Fail("malformed description".into())
        );
    }

    #[test]
    fn settlement_hook_is_consulted() {
        struct Never;
        impl SettlementCheck for Never {
            fn is_settled(&self, _: &ZapReceipt) -> bool {
                false
            }
        }
        let f = fixture();
        let p = pay(&f);
        assert!(!validate_receipt(&p.receipt, &expected(&f), &Never).is_pass());
    }

    #[test]
    fn paid_at_is_monotone_per_node() {
        let f = fixture();
        let a = pay(&f).receipt.created_at;
        let b = pay(&f).receipt.created_at;
        assert!(b >= a);
    }
}
