use std::time::{SystemTime, UNIX_EPOCH};

use k256::schnorr::{Signature, VerifyingKey};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{is_lower_hex, Keypair, NostrError};

/// Current unix time in seconds.
pub fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

/// An unsigned event: everything that goes into the id.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventTemplate {
    pub pubkey: String,
    pub created_at: u64,
    pub kind: u16,
    pub tags: Vec<Vec<String>>,
    pub content: String,
}

impl EventTemplate {
    pub fn new(
        pubkey: impl Into<String>,
        created_at: u64,
        kind: u16,
        tags: Vec<Vec<String>>,
        content: impl Into<String>,
    ) -> Self {
        Self {
            pubkey: pubkey.into(),
            created_at,
            kind,
            tags,
            content: content.into(),
        }
    }

    /// Canonical serialization: compact JSON array with fields in fixed order.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(&(
            0u8,
            &self.pubkey,
            self.created_at,
            self.kind,
            &self.tags,
            &self.content,
        ))
        .expect("strings and integers always serialize")
    }
}

/// A signed NOSTR event, the wire unit exchanged with relays.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Event {
    pub id: String,
    pub pubkey: String,
    pub created_at: u64,
    pub kind: u16,
    pub tags: Vec<Vec<String>>,
    pub content: String,
    pub sig: String,
}

impl Event {
    pub fn template(&self) -> EventTemplate {
        EventTemplate {
            pubkey: self.pubkey.clone(),
            created_at: self.created_at,
            kind: self.kind,
            tags: self.tags.clone(),
            content: self.content.clone(),
        }
    }

    /// First tag whose name is `name`.
    pub fn tag(&self, name: &str) -> Option<&[String]> {
        self.tags
            .iter()
            .find(|t| t.first().map(String::as_str) == Some(name))
            .map(Vec::as_slice)
    }

    /// All tags whose name is `name`.
    pub fn tags_named<'a>(&'a self, name: &'a str) -> impl Iterator<Item = &'a [String]> + 'a {
        self.tags
            .iter()
            .filter(move |t| t.first().map(String::as_str) == Some(name))
            .map(Vec::as_slice)
    }

    /// Second element of the first tag named `name`.
    pub fn tag_value(&self, name: &str) -> Option<&str> {
        self.tag(name).and_then(|t| t.get(1)).map(String::as_str)
    }

    /// Value of the `d` tag, or empty when absent (addressable-event key).
    pub fn d_tag(&self) -> &str {
        self.tag_value("d").unwrap_or("")
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("event always serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(s)
    }
}

/// SHA-256 over the canonical serialization of `t`.
pub fn compute_event_id(t: &EventTemplate) -> [u8; 32] {
    Sha256::digest(t.canonical_json().as_bytes()).into()
}

/// Signs `t` with `k`. The template's pubkey must belong to `k`, and every
/// tag must have at least one element.
pub fn sign_event(t: EventTemplate, k: &Keypair) -> Result<Event, NostrError> {
    if t.pubkey != k.public_key() {
        return Err(NostrError::PubkeyMismatch {
            template: t.pubkey,
            signer: k.public_key().to_string(),
        });
    }
    if t.tags.iter().any(Vec::is_empty) {
        return Err(NostrError::InvalidTemplate("empty tag".into()));
    }
    let id = compute_event_id(&t);
    let sig = k
        .signing_key()
        .sign_prehash_with_aux_rand(&id, &[0u8; 32])
        .map_err(|_| NostrError::InvalidSecretKey)?;
    Ok(Event {
        id: hex::encode(id),
        pubkey: t.pubkey,
        created_at: t.created_at,
        kind: t.kind,
        tags: t.tags,
        content: t.content,
        sig: hex::encode(sig.to_bytes()),
    })
}

/// True iff the id recomputes from the fields and the signature verifies
/// against (id, pubkey). Malformed hex yields false.
pub fn verify_event(e: &Event) -> bool {
    if !is_lower_hex(&e.id, 64) || !is_lower_hex(&e.pubkey, 64) || !is_lower_hex(&e.sig, 128) {
        return false;
    }
    let id = compute_event_id(&e.template());
    if hex::encode(id) != e.id {
        return false;
    }
    let (Ok(pk), Ok(sig)) = (hex::decode(&e.pubkey), hex::decode(&e.sig)) else {
        return false;
    };
    let Ok(vk) = VerifyingKey::from_bytes(&pk) else {
        return false;
    };
    let Ok(sig) = Signature::try_from(sig.as_slice()) else {
        return false;
    };
    vk.verify_raw(&id, &sig).is_ok()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nostr::generate_keypair;

    fn keypair() -> Keypair {
        generate_keypair(Some([3u8; 32])).unwrap()
    }

    fn template(k: &Keypair) -> EventTemplate {
        EventTemplate::new(
            k.public_key(),
            1_700_000_000,
            7000,
            vec![vec!["status".into(), "processing".into()], vec!["p".into(), "ab".into()]],
            "hello",
        )
    }

    // Digest computed independently with Python's hashlib over
    // json.dumps(..., separators=(",", ":"), ensure_ascii=False).
    #[test]
    fn event_id_matches_independent_digest() {
        let t = EventTemplate::new(
            "79be667ef9dcbbac55a06295ce870b07029bfcdb2dce28d959f2815b16f81798",
            1_700_000_000,
            8000,
            vec![
                vec!["param".into(), "task".into(), "Inner".into()],
                vec!["p".into(), "ab".into()],
                vec![
                    "i".into(),
                    "https://x/y?a=1&b=\"q\"".into(),
                    "url".into(),
                    "".into(),
                    "".into(),
                ],
            ],
            "line1\nline2 \\ tab\t é",
        );
        assert_eq!(
            t.canonical_json(),
            r#"[0,"79be667ef9dcbbac55a06295ce870b07029bfcdb2dce28d959f2815b16f81798",1700000000,8000,[["param","task","Inner"],["p","ab"],["i","https://x/y?a=1&b=\"q\"","url","",""]],"line1\nline2 \\ tab\t é"]"#
        );
        assert_eq!(
            hex::encode(compute_event_id(&t)),
            "6c73ca5870635a3b60daeb59d7f5a49247bddbd5edf486d6ceab11a04e0a7147"
        );
    }

    #[test]
    fn id_is_sensitive_to_one_tag_character() {
        let k = keypair();
        let a = template(&k);
        let mut b = a.clone();
        b.tags[1][1] = "ac".into();
        assert_ne!(compute_event_id(&a), compute_event_id(&b));
        assert_eq!(compute_event_id(&a), compute_event_id(&a.clone()));
    }

    #[test]
    fn sign_then_verify() {
        let k = keypair();
        let e = sign_event(template(&k), &k).unwrap();
        assert!(verify_event(&e));
    }

    // BIP-340 test vector 0: secret 3, zero aux randomness, zero message.
    #[test]
    fn bip340_vector_zero() {
        let mut secret = [0u8; 32];
        secret[31] = 3;
        let k = Keypair::from_secret_bytes(&secret).unwrap();
        assert_eq!(
            k.public_key(),
            "f9308a019258c31049344f85f89d5229b531c845836f99b08601f113bce036f9"
        );
        let sig = k
            .signing_key()
            .sign_prehash_with_aux_rand(&[0u8; 32], &[0u8; 32])
            .unwrap();
        assert_eq!(
            hex::encode(sig.to_bytes()),
            "e907831f80848d1069a5371b402410364bdf1c5f8307b0084c55f1ce2dca8215\
             25f66a4a85ea8b71e482a74f382d2ce5ebeee8fdb2172f477df4900d310536c0"
        );
    }

    #[test]
    fn sign_with_foreign_pubkey_fails() {
        let k1 = keypair();
        let k2 = generate_keypair(Some([4u8; 32])).unwrap();
        let err = sign_event(template(&k2), &k1).unwrap_err();
        assert!(matches!(err, NostrError::PubkeyMismatch { .. }));
    }

    #[test]
    fn empty_tag_is_rejected() {
        let k = keypair();
        let mut t = template(&k);
        t.tags.push(vec![]);
        assert!(matches!(sign_event(t, &k), Err(NostrError::InvalidTemplate(_))));
    }

    #[test]
    fn tampering_is_detected() {
        let k = keypair();
        let e = sign_event(template(&k), &k).unwrap();

        let mut content = e.clone();
        content.content.push('!');
        assert!(!verify_event(&content));

        let mut sig = e.clone();
        let mut bytes = hex::decode(&sig.sig).unwrap();
        bytes[10] ^= 0x01;
        sig.sig = hex::encode(bytes);
        assert!(!verify_event(&sig));

        let mut ts = e.clone();
        ts.created_at += 1;
        assert!(!verify_event(&ts));
    }

    #[test]
    fn malformed_hex_is_false_not_panic() {
        let k = keypair();
        let mut e = sign_event(template(&k), &k).unwrap();
        e.sig = "zz".repeat(64);
        assert!(!verify_event(&e));
        e.pubkey = "ABC".into();
        assert!(!verify_event(&e));
    }

    #[test]
    fn wire_json_round_trip() {
        let k = keypair();
        let e = sign_event(template(&k), &k).unwrap();
        let back = Event::from_json(&e.to_json()).unwrap();
        assert_eq!(back, e);
        assert!(verify_event(&back));
    }
}
