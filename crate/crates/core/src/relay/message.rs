use serde_json::{json, Value};

use crate::nostr::{Event, Filter};

/// Client to relay frames.
#[derive(Debug, Clone, PartialEq)]
pub enum ClientMessage {
    Event(Event),
    Req { sub_id: String, filters: Vec<Filter> },
    Close(String),
}

/// Relay to client frames.
#[derive(Debug, Clone, PartialEq)]
pub enum RelayMessage {
    Event { sub_id: String, event: Event },
    Ok { event_id: String, accepted: bool, message: String },
    Eose(String),
    Notice(String),
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("malformed message: {0}")]
pub struct MessageError(pub String);

fn bad(m: impl Into<String>) -> MessageError {
    MessageError(m.into())
}

fn array(text: &str) -> Result<Vec<Value>, MessageError> {
    match serde_json::from_str::<Value>(text) {
        Ok(Value::Array(a)) if !a.is_empty() => Ok(a),
        Ok(_) => Err(bad("expected a non-empty JSON array")),
        Err(e) => Err(bad(format!("invalid JSON: {e}"))),
    }
}

fn string(v: Option<&Value>, what: &str) -> Result<String, MessageError> {
    v.and_then(Value::as_str)
        .map(str::to_string)
        .ok_or_else(|| bad(format!("{what} must be a string")))
}

impl ClientMessage {
    pub fn to_json(&self) -> String {
        match self {
            ClientMessage::Event(e) => json!(["EVENT", e]).to_string(),
            ClientMessage::Req { sub_id, filters } => {
                let mut a = vec![json!("REQ"), json!(sub_id)];
                a.extend(filters.iter().map(|f| serde_json::to_value(f).expect("filters serialize")));
                Value::Array(a).to_string()
            }
            ClientMessage::Close(id) => json!(["CLOSE", id]).to_string(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self, MessageError> {
        let mut a = array(text)?;
        let tag = string(a.first(), "message type")?;
        match tag.as_str() {
            "EVENT" => {
                let v = a.get_mut(1).map(Value::take).ok_or_else(|| bad("EVENT without event"))?;
                let e: Event = serde_json::from_value(v).map_err(|e| bad(format!("bad event: {e}")))?;
                Ok(ClientMessage::Event(e))
            }
            "REQ" => {
                let sub_id = string(a.get(1), "subscription id")?;
                if sub_id.is_empty() || sub_id.len() > 64 {
                    return Err(bad("subscription id must be 1-64 chars"));
                }
                let filters = a
                    .drain(2..)
                    .map(|v| serde_json::from_value::<Filter>(v).map_err(|e| bad(format!("bad filter: {e}"))))
                    .collect::<Result<Vec<_>, _>>()?;
                Ok(ClientMessage::Req { sub_id, filters })
            }
            "CLOSE" => Ok(ClientMessage::Close(string(a.get(1), "subscription id")?)),
            other => Err(bad(format!("unknown message type {other:?}"))),
        }
    }
}

impl RelayMessage {
    pub fn to_json(&self) -> String {
        match self {
            RelayMessage::Event { sub_id, event } => json!(["EVENT", sub_id, event]).to_string(),
            RelayMessage::Ok {
                event_id,
                accepted,
                message,
            } => json!(["OK", event_id, accepted, message]).to_string(),
            RelayMessage::Eose(id) => json!(["EOSE", id]).to_string(),
            RelayMessage::Notice(m) => json!(["NOTICE", m]).to_string(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self, MessageError> {
        let mut a = array(text)?;
        let tag = string(a.first(), "message type")?;
        match tag.as_str() {
            "EVENT" => {
                let sub_id = string(a.get(1), "subscription id")?;
                let v = a.get_mut(2).map(Value::take).ok_or_else(|| bad("EVENT without event"))?;
                let event = serde_json::from_value(v).map_err(|e| bad(format!("bad event: {e}")))?;
                Ok(RelayMessage::Event { sub_id, event })
            }
            "OK" => Ok(RelayMessage::Ok {
                event_id: string(a.get(1), "event id")?,
                accepted: a.get(2).and_then(Value::as_bool).ok_or_else(|| bad("OK flag must be a bool"))?,
                message: a.get(3).and_then(Value::as_str).unwrap_or("").to_string(),
            }),
            "EOSE" => Ok(RelayMessage::Eose(string(a.get(1), "subscription id")?)),
            "NOTICE" => Ok(RelayMessage::Notice(string(a.get(1), "notice")?)),
            other => Err(bad(format!("unknown message type {other:?}"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nostr::{generate_keypair, sign_event, EventTemplate};

    fn event() -> Event {
        let k = generate_keypair(Some([1; 32])).unwrap();
        sign_event(EventTemplate::new(k.public_key(), 1, 1, vec![], "hi"), &k).unwrap()
    }

    #[test]
    fn client_messages_round_trip() {
        let msgs = [
            ClientMessage::Event(event()),
            ClientMessage::Req {
                sub_id: "s1".into(),
                filters: vec![Filter::new().kinds([7000]).tag('p', ["ab"]), Filter::new().limit(3)],
            },
            ClientMessage::Close("s1".into()),
        ];
        for m in msgs {
            assert_eq!(ClientMessage::from_json(&m.to_json()).unwrap(), m);
        }
    }

    #[test]
    fn relay_messages_round_trip() {
        let msgs = [
            RelayMessage::Event {
                sub_id: "x".into(),
                event: event(),
            },
            RelayMessage::Ok {
                event_id: "ab".into(),
                accepted: false,
                message: "invalid: signature".into(),
            },
            RelayMessage::Eose("x".into()),
            RelayMessage::Notice("hello".into()),
        ];
        for m in msgs {
            assert_eq!(RelayMessage::from_json(&m.to_json()).unwrap(), m);
        }
    }

    #[test]
    fn wire_shapes() {
        assert_eq!(ClientMessage::Close("a".into()).to_json(), r#"["CLOSE","a"]"#);
        assert_eq!(RelayMessage::Eose("a".into()).to_json(), r#"["EOSE","a"]"#);
        let req = ClientMessage::Req {
            sub_id: "a".into(),
            filters: vec![Filter::new().kinds([1])],
        };
        assert_eq!(req.to_json(), r#"["REQ","a",{"kinds":[1]}]"#);
    }

    #[test]
    fn malformed_inputs() {
        for s in ["", "{}", "[]", "[1]", r#"["PING"]"#, r#"["EVENT"]"#, r#"["REQ"]"#, r#"["EVENT",{"id":1}]"#] {
            assert!(ClientMessage::from_json(s).is_err(), "{s}");
        }
    }
}
