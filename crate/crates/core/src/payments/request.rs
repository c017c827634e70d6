use crate::events::{EventError, KIND_ZAP_REQUEST};
use crate::nostr::{is_lower_hex, sign_event, unix_now, Event, EventTemplate, Keypair};

use super::PaymentError;

/// lnurl used by the in-process stub wallet of `pubkey`.
pub fn stub_lnurl(pubkey: &str) -> String {
    format!("lnurlstub1{pubkey}")
}

/// Zap request (kind 9734). Handed to the recipient's pay endpoint rather
/// than published.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ZapRequest {
    pub relays: Vec<String>,
    pub amount_msats: u64,
    pub lnurl: String,
    pub recipient: String,
    pub event_id: Option<String>,
    pub message: String,
}

impl ZapRequest {
    pub fn to_template(&self, pubkey: &str, created_at: u64) -> Result<EventTemplate, PaymentError> {
        if self.amount_msats == 0 {
            return Err(PaymentError::ZeroAmount);
        }
        if !is_lower_hex(&self.recipient, 64) {
            return Err(EventError::MalformedTag {
                tag: "p".into(),
                reason: "recipient must be a 64-char hex pubkey".into(),
            }
            .into());
        }
        let mut relays = vec!["relays".to_string()];
        relays.extend(self.relays.iter().cloned());
        let mut tags = vec![
            relays,
            vec!["amount".into(), self.amount_msats.to_string()],
            vec!["lnurl".into(), self.lnurl.clone()],
            vec!["p".into(), self.recipient.clone()],
        ];
        if let Some(e) = &self.event_id {
            tags.push(vec!["e".into(), e.clone()]);
        }
        Ok(EventTemplate::new(pubkey, created_at, KIND_ZAP_REQUEST, tags, self.message.clone()))
    }

    pub fn from_event(e: &Event) -> Result<Self, EventError> {
        if e.kind != KIND_ZAP_REQUEST {
            return Err(EventError::WrongKind {
                expected: KIND_ZAP_REQUEST.to_string(),
                got: e.kind,
            });
        }
        let need = |n: &str| e.tag_value(n).ok_or_else(|| EventError::MissingTag(n.into()));
        let amount_msats = need("amount")?.parse::<u64>().map_err(|_| EventError::MalformedTag {
            tag: "amount".into(),
            reason: "not an integer".into(),
        })?;
        Ok(ZapRequest {
            relays: e.tag("relays").map(|t| t[1..].to_vec()).unwrap_or_default(),
            amount_msats,
            lnurl: need("lnurl")?.to_string(),
            recipient: need("p")?.to_string(),
            event_id: e.tag_value("e").map(str::to_string),
            message: e.content.clone(),
        })
    }
}

/// Signed zap request for `amount_msats` to `recipient`, optionally paying
/// for a specific event.
pub fn create_zap_request(
    amount_msats: u64,
    lnurl: &str,
    recipient: &str,
    event_id: Option<&str>,
    relays: &[String],
    signer: &Keypair,
) -> Result<Event, PaymentError> {
    let req = ZapRequest {
        relays: relays.to_vec(),
        amount_msats,
        lnurl: lnurl.to_string(),
        recipient: recipient.to_string(),
        event_id: event_id.map(str::to_string),
        message: "Zap!".into(),
    };
    Ok(sign_event(req.to_template(signer.public_key(), unix_now())?, signer)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nostr::generate_keypair;

    #[test]
    fn carries_amount_and_recipient() {
        let k = generate_keypair(Some([1; 32])).unwrap();
        let r = "ab".repeat(32);
        let e = create_zap_request(1000, "lnurlx", &r, None, &["ws://a".into()], &k).unwrap();
        assert!(e.tags.contains(&vec!["amount".to_string(), "1000".to_string()]));
        assert!(e.tags.contains(&vec!["p".to_string(), r.clone()]));
        assert!(e.tag("e").is_none());
        let e = create_zap_request(1000, "lnurlx", &r, Some(&"cd".repeat(32)), &[], &k).unwrap();
        assert_eq!(e.tag_value("e"), Some("cd".repeat(32).as_str()));
        assert_eq!(ZapRequest::from_event(&e).unwrap().event_id, Some("cd".repeat(32)));
    }

    #[test]
    fn zero_amount_rejected() {
        let k = generate_keypair(Some([1; 32])).unwrap();
        assert_eq!(
            create_zap_request(0, "lnurlx", &"ab".repeat(32), None, &[], &k),
            Err(PaymentError::ZeroAmount)
        );
    }
}
