use std::collections::BTreeMap;

use serde::de::{self, Deserializer};
use serde::ser::{SerializeMap, Serializer};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::Event;

/// A NIP-01 subscription filter.
///
/// Present fields combine conjunctively; values within one field combine
/// disjunctively. `ids` and `authors` match by prefix.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Filter {
    pub ids: Option<Vec<String>>,
    pub authors: Option<Vec<String>>,
    pub kinds: Option<Vec<u16>>,
    pub tag_queries: BTreeMap<char, Vec<String>>,
    pub since: Option<u64>,
    pub until: Option<u64>,
    pub limit: Option<usize>,
}

impl Filter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn ids<I, S>(mut self, ids: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.ids = Some(ids.into_iter().map(Into::into).collect());
        self
    }

    pub fn authors<I, S>(mut self, authors: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.authors = Some(authors.into_iter().map(Into::into).collect());
        self
    }

    pub fn kinds(mut self, kinds: impl IntoIterator<Item = u16>) -> Self {
        self.kinds = Some(kinds.into_iter().collect());
        self
    }

    pub fn tag<I, S>(mut self, name: char, values: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.tag_queries
            .insert(name, values.into_iter().map(Into::into).collect());
        self
    }

    pub fn since(mut self, ts: u64) -> Self {
        self.since = Some(ts);
        self
    }

    pub fn until(mut self, ts: u64) -> Self {
        self.until = Some(ts);
        self
    }

    pub fn limit(mut self, n: usize) -> Self {
        self.limit = Some(n);
        self
    }

    /// Whether `e` satisfies every present field. `limit` only affects
    /// stored-event replay and is ignored here.
    pub fn matches(&self, e: &Event) -> bool {
        if let Some(ids) = &self.ids {
            if !ids.iter().any(|p| e.id.starts_with(p.as_str())) {
                return false;
            }
        }
        if let Some(authors) = &self.authors {
            if !authors.iter().any(|p| e.pubkey.starts_with(p.as_str())) {
                return false;
            }
        }
        if let Some(kinds) = &self.kinds {
            if !kinds.contains(&e.kind) {
                return false;
            }
        }
        if self.since.is_some_and(|s| e.created_at < s) {
            return false;
        }
        if self.until.is_some_and(|u| e.created_at > u) {
            return false;
        }
        self.tag_queries.iter().all(|(name, values)| {
            let mut buf = [0u8; 4];
            let name = name.encode_utf8(&mut buf);
            e.tags.iter().any(|t| {
                t.len() >= 2 && t[0] == *name && values.iter().any(|v| *v == t[1])
            })
        })
    }
}

/// Shorthand for [`Filter::matches`].
pub fn matches_filter(e: &Event, f: &Filter) -> bool {
    f.matches(e)
}

impl Serialize for Filter {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let mut map = serializer.serialize_map(None)?;
        if let Some(ids) = &self.ids {
            map.serialize_entry("ids", ids)?;
        }
        if let Some(authors) = &self.authors {
            map.serialize_entry("authors", authors)?;
        }
        if let Some(kinds) = &self.kinds {
            map.serialize_entry("kinds", kinds)?;
        }
        for (name, values) in &self.tag_queries {
            map.serialize_entry(&format!("#{name}"), values)?;
        }
        if let Some(since) = self.since {
            map.serialize_entry("since", &since)?;
        }
        if let Some(until) = self.until {
            map.serialize_entry("until", &until)?;
        }
        if let Some(limit) = self.limit {
            map.serialize_entry("limit", &limit)?;
        }
        map.end()
    }
}

impl<'de> Deserialize<'de> for Filter {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let raw = serde_json::Map::<String, Value>::deserialize(deserializer)?;
        let mut f = Filter::default();
        for (key, value) in raw {
            match key.as_str() {
                "ids" => f.ids = Some(serde_json::from_value(value).map_err(de::Error::custom)?),
                "authors" => {
                    f.authors = Some(serde_json::from_value(value).map_err(de::Error::custom)?)
                }
                "kinds" => f.kinds = Some(serde_json::from_value(value).map_err(de::Error::custom)?),
                "since" => f.since = Some(serde_json::from_value(value).map_err(de::Error::custom)?),
                "until" => f.until = Some(serde_json::from_value(value).map_err(de::Error::custom)?),
                "limit" => f.limit = Some(serde_json::from_value(value).map_err(de::Error::custom)?),
                k if k.starts_with('#') && k.chars().count() == 2 => {
                    let name = k.chars().nth(1).expect("length checked");
                    let values: Vec<String> =
                        serde_json::from_value(value).map_err(de::Error::custom)?;
                    f.tag_queries.insert(name, values);
                }
                // unknown filter keys are ignored, as relays commonly do
                _ => {}
            }
        }
        Ok(f)
    }
}
