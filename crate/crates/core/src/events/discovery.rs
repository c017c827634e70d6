use serde::{Deserialize, Serialize};

use crate::nostr::{sign_event, unix_now, Event, EventTemplate, Keypair};

use super::{malformed, tag, EventError, KIND_DISCOVERABILITY};

/// `["i", "specifications", hardware, max_execution_time, model_dimensions_range]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProviderSpec {
    pub hardware: String,
    pub max_execution_time: String,
    pub model_dimensions_range: String,
}

/// Provider announcement (kind 31990, addressable by `d`).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Discoverability {
    pub identifier: String,
    pub name: String,
    pub about: String,
    pub lnurl: Option<String>,
    pub supported_kinds: Vec<u16>,
    pub topics: Vec<String>,
    pub specs: Vec<ProviderSpec>,
}

#[derive(Serialize, Deserialize)]
struct Content {
    name: String,
    about: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    lnurl: Option<String>,
}

impl Discoverability {
    /// An announcement without `k` tags is parseable but not usable.
    pub fn is_usable(&self) -> bool {
        !self.supported_kinds.is_empty()
    }

    pub fn supports(&self, kind: u16) -> bool {
        self.supported_kinds.contains(&kind)
    }

    pub fn to_template(&self, pubkey: &str, created_at: u64) -> EventTemplate {
        let mut tags = vec![tag(&["d", &self.identifier])];
        for k in &self.supported_kinds {
            tags.push(tag(&["k", &k.to_string()]));
        }
        for t in &self.topics {
            tags.push(tag(&["t", t]));
        }
        for s in &self.specs {
            tags.push(tag(&[
                "i",
                "specifications",
                &s.hardware,
                &s.max_execution_time,
                &s.model_dimensions_range,
            ]));
        }
        let content = serde_json::to_string(&Content {
            name: self.name.clone(),
            about: self.about.clone(),
            lnurl: self.lnurl.clone(),
        })
        .expect("plain strings serialize");
        EventTemplate::new(pubkey, created_at, KIND_DISCOVERABILITY, tags, content)
    }

    pub fn from_event(e: &Event) -> Result<Self, EventError> {
        if e.kind != KIND_DISCOVERABILITY {
            return Err(EventError::WrongKind {
                expected: KIND_DISCOVERABILITY.to_string(),
                got: e.kind,
            });
        }
        let content: Content =
            serde_json::from_str(&e.content).map_err(|err| malformed("content", err.to_string()))?;
        let supported_kinds = e
            .tags_named("k")
            .map(|t| {
                t.get(1)
                    .and_then(|v| v.parse::<u16>().ok())
                    .ok_or_else(|| malformed("k", "kind must be an integer"))
            })
            .collect::<Result<_, _>>()?;
        let topics = e.tags_named("t").filter_map(|t| t.get(1).cloned()).collect();
        let mut specs = Vec::new();
        for t in e.tags_named("i") {
            if t.get(1).map(String::as_str) != Some("specifications") {
                continue;
            }
            if t.len() != 5 {
                return Err(malformed("i", "specifications needs hardware, time and dimensions"));
            }
            specs.push(ProviderSpec {
                hardware: t[2].clone(),
                max_execution_time: t[3].clone(),
                model_dimensions_range: t[4].clone(),
            });
        }
        Ok(Discoverability {
            identifier: e.d_tag().to_string(),
            name: content.name,
            about: content.about,
            lnurl: content.lnurl,
            supported_kinds,
            topics,
            specs,
        })
    }
}

pub fn build_discoverability(d: &Discoverability, signer: &Keypair) -> Result<Event, EventError> {
    Ok(sign_event(d.to_template(signer.public_key(), unix_now()), signer)?)
}

pub fn parse_discoverability(e: &Event) -> Result<Discoverability, EventError> {
    Discoverability::from_event(e)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nostr::generate_keypair;

    fn sample() -> Discoverability {
        Discoverability {
            identifier: "fedstr-provider".into(),
            name: "Federated Learning AI-VM".into(),
            about: "I'm a AI-VM for federated learning.".into(),
            lnurl: Some("lnurlstub".into()),
            supported_kinds: vec![8000],
            topics: vec!["bitcoin".into()],
            specs: vec![ProviderSpec {
                hardware: "cpu-4".into(),
                max_execution_time: "600".into(),
                model_dimensions_range: "1-100000".into(),
            }],
        }
    }

    #[test]
    fn announces_kind_8000() {
        let k = generate_keypair(Some([9; 32])).unwrap();
        let e = build_discoverability(&sample(), &k).unwrap();
        assert!(e.tags.contains(&tag(&["k", "8000"])));
        assert_eq!(parse_discoverability(&e).unwrap(), sample());
    }

    #[test]
    fn no_k_tag_is_not_usable() {
        let k = generate_keypair(Some([9; 32])).unwrap();
        let mut d = sample();
        d.supported_kinds.clear();
        let parsed = parse_discoverability(&build_discoverability(&d, &k).unwrap()).unwrap();
        assert!(parsed.supported_kinds.is_empty());
        assert!(!parsed.is_usable());
    }
}
