use crate::nostr::{sign_event, unix_now, Event, EventTemplate, Keypair};

use super::{malformed, parse_u64, tag, EventError, KIND_FILE_METADATA};

/// NIP-94 file metadata (kind 1063) for a stored model blob.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FileMetadata {
    pub url: String,
    pub sha256: String,
    pub mime: String,
    pub size_bytes: u64,
    pub alt: Option<String>,
    pub description: String,
}

impl FileMetadata {
    pub fn to_template(&self, pubkey: &str, created_at: u64) -> Result<EventTemplate, EventError> {
        if !crate::nostr::is_lower_hex(&self.sha256, 64) {
            return Err(malformed("x", "sha256 must be 64 lowercase hex chars"));
        }
        let mut tags = vec![
            tag(&["url", &self.url]),
            tag(&["x", &self.sha256]),
            tag(&["m", &self.mime]),
            tag(&["size", &self.size_bytes.to_string()]),
        ];
        if let Some(a) = &self.alt {
            tags.push(tag(&["alt", a]));
        }
        Ok(EventTemplate::new(pubkey, created_at, KIND_FILE_METADATA, tags, self.description.clone()))
    }

    pub fn from_event(e: &Event) -> Result<Self, EventError> {
        if e.kind != KIND_FILE_METADATA {
            return Err(EventError::WrongKind {
                expected: KIND_FILE_METADATA.to_string(),
                got: e.kind,
            });
        }
        let need = |n: &str| e.tag_value(n).ok_or_else(|| EventError::MissingTag(n.into()));
        let sha256 = need("x")?.to_string();
        if !crate::nostr::is_lower_hex(&sha256, 64) {
            return Err(malformed("x", "sha256 must be 64 lowercase hex chars"));
        }
        Ok(FileMetadata {
            url: need("url")?.to_string(),
            sha256,
            mime: need("m")?.to_string(),
            size_bytes: parse_u64("size", need("size")?)?,
            alt: e.tag_value("alt").map(str::to_string),
            description: e.content.clone(),
        })
    }
}

pub fn build_file_metadata(m: &FileMetadata, signer: &Keypair) -> Result<Event, EventError> {
    Ok(sign_event(m.to_template(signer.public_key(), unix_now())?, signer)?)
}

pub fn parse_file_metadata(e: &Event) -> Result<FileMetadata, EventError> {
    FileMetadata::from_event(e)
}
