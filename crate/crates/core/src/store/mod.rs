//! Content-addressed model storage. Every read is checked against the
//! SHA-256 digest carried in the [`StorageRef`], whatever the backend.

mod file;
mod http;

pub use file::FileStore;
pub use http::HttpStore;

use std::fmt;
use std::io::Read;
use std::path::PathBuf;
use std::sync::Arc;

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::ml::{deserialize_params, serialize_params, MlError, ModelParams};

/// Default cap on bytes accepted from a remote blob.
pub const DEFAULT_MAX_BLOB_BYTES: u64 = 256 * 1024 * 1024;

/// Environment variable naming the file backend root.
pub const MODEL_ROOT_ENV: &str = "FEDSTR_MODEL_ROOT";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StoreError {
    #[error("refusing to store an empty blob")]
    Empty,
    #[error("integrity check failed: expected sha256 {expected}, got {actual}")]
    Integrity { expected: String, actual: String },
    #[error("blob not found: {0}")]
    NotFound(String),
    #[error("retrieval failed: {0}")]
    Retrieval(String),
    #[error("storage write failed: {0}")]
    Write(String),
    #[error("blob exceeds {0} bytes")]
    TooLarge(u64),
    #[error("malformed storage reference: {0}")]
    BadRef(String),
    #[error("stored blob is not a parameter vector: {0}")]
    Decode(#[from] MlError),
}

/// URL plus SHA-256 digest of the bytes stored there.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct StorageRef {
    pub url: String,
    pub sha256: String,
    pub size_bytes: u64,
}

impl StorageRef {
    /// `url:<url>;sha256:<hex>;size:<n>`, the form carried in event tags.
    pub fn to_tag_value(&self) -> String {
        format!("url:{};sha256:{};size:{}", self.url, self.sha256, self.size_bytes)
    }

    /// Parses the tag form. Extra `;key:value` fields after `size` are
    /// returned in order.
    pub fn parse_tag_value(s: &str) -> Result<(StorageRef, Vec<(String, String)>), StoreError> {
        let bad = || StoreError::BadRef(s.chars().take(120).collect());
        let rest = s.strip_prefix("url:").ok_or_else(bad)?;
        let at = rest.rfind(";sha256:").ok_or_else(bad)?;
        let url = &rest[..at];
        let mut fields = rest[at + 1..].split(';');
        let sha = fields.next().and_then(|f| f.strip_prefix("sha256:")).ok_or_else(bad)?;
        if !crate::nostr::is_lower_hex(sha, 64) || url.is_empty() {
            return Err(bad());
        }
        let size = fields
            .next()
            .and_then(|f| f.strip_prefix("size:"))
            .and_then(|n| n.parse::<u64>().ok())
            .ok_or_else(bad)?;
        let mut extras = Vec::new();
        for f in fields {
            let (k, v) = f.split_once(':').ok_or_else(bad)?;
            extras.push((k.to_string(), v.to_string()));
        }
        Ok((
            StorageRef {
                url: url.to_string(),
                sha256: sha.to_string(),
                size_bytes: size,
            },
            extras,
        ))
    }
}

impl fmt::Display for StorageRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_tag_value())
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// File name used for a blob with the given digest.
pub fn blob_file_name(sha256: &str) -> String {
    format!("model_{sha256}.bin")
}

/// A place blobs can be written to. Reads go through [`fetch_url`], so a
/// ref from any backend can be resolved by any other.
pub trait ModelStore: Send + Sync + fmt::Debug {
    /// Stores `blob` under its content address and returns its URL.
    fn write_blob(&self, sha256: &str, blob: &[u8]) -> Result<String, StoreError>;

    fn max_blob_bytes(&self) -> u64 {
        DEFAULT_MAX_BLOB_BYTES
    }
}

pub type SharedStore = Arc<dyn ModelStore>;

pub fn put_model(blob: &[u8], store: &dyn ModelStore) -> Result<StorageRef, StoreError> {
    if blob.is_empty() {
        return Err(StoreError::Empty);
    }
    let sha256 = sha256_hex(blob);
    let url = store.write_blob(&sha256, blob)?;
    Ok(StorageRef {
        url,
        sha256,
        size_bytes: blob.len() as u64,
    })
}

/// Downloads the blob and returns it only if its digest matches.
pub fn get_model(r: &StorageRef, store: &dyn ModelStore) -> Result<Vec<u8>, StoreError> {
    if !crate::nostr::is_lower_hex(&r.sha256, 64) {
        return Err(StoreError::BadRef(r.sha256.clone()));
    }
    let bytes = fetch_url(&r.url, store.max_blob_bytes())?;
    let actual = sha256_hex(&bytes);
    if actual != r.sha256 {
        return Err(StoreError::Integrity {
            expected: r.sha256.clone(),
            actual,
        });
    }
    Ok(bytes)
}

pub fn put_params(p: &ModelParams, store: &dyn ModelStore) -> Result<StorageRef, StoreError> {
    put_model(&serialize_params(p)?, store)
}

pub fn get_params(r: &StorageRef, store: &dyn ModelStore) -> Result<ModelParams, StoreError> {
    Ok(deserialize_params(&get_model(r, store)?)?)
}

/// Reads raw bytes from a `file://` or `http(s)://` URL without any
/// integrity check.
pub fn fetch_url(url: &str, max_bytes: u64) -> Result<Vec<u8>, StoreError> {
    let parsed = url::Url::parse(url).map_err(|e| StoreError::BadRef(format!("{url}: {e}")))?;
    match parsed.scheme() {
        "file" => {
            let path: PathBuf = parsed
                .to_file_path()
                .map_err(|_| StoreError::BadRef(url.to_string()))?;
            match std::fs::read(&path) {
                Ok(b) if b.len() as u64 > max_bytes => Err(StoreError::TooLarge(max_bytes)),
                Ok(b) => Ok(b),
                Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                    Err(StoreError::NotFound(path.display().to_string()))
                }
                Err(e) => Err(StoreError::Retrieval(e.to_string())),
            }
        }
        "http" | "https" => {
            let resp = match ureq::get(url).call() {
                Ok(r) => r,
                Err(ureq::Error::Status(404, _)) => return Err(StoreError::NotFound(url.to_string())),
                Err(e) => return Err(StoreError::Retrieval(e.to_string())),
            };
            let mut buf = Vec::new();
            resp.into_reader()
                .take(max_bytes + 1)
                .read_to_end(&mut buf)
                .map_err(|e| StoreError::Retrieval(e.to_string()))?;
            if buf.len() as u64 > max_bytes {
                return Err(StoreError::TooLarge(max_bytes));
            }
            Ok(buf)
        }
        other => Err(StoreError::BadRef(format!("unsupported scheme {other}"))),
    }
}

/// File store rooted at `$FEDSTR_MODEL_ROOT`, or `./fedstr_models`.
pub fn default_store() -> Result<FileStore, StoreError> {
    let root = std::env::var_os(MODEL_ROOT_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("fedstr_models"));
    FileStore::new(root)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tag_value_round_trip_with_extras() {
        let r = StorageRef {
            url: "http://127.0.0.1:9000/a;b/model_x.bin".into(),
            sha256: "ab".repeat(32),
            size_bytes: 42,
        };
        let (back, extras) = StorageRef::parse_tag_value(&r.to_tag_value()).unwrap();
        assert_eq!(back, r);
        assert!(extras.is_empty());
        let with_loss = format!("{};loss:0.125", r.to_tag_value());
        let (back, extras) = StorageRef::parse_tag_value(&with_loss).unwrap();
        assert_eq!(back, r);
        assert_eq!(extras, vec![("loss".to_string(), "0.125".to_string())]);
    }

    #[test]
    fn malformed_refs_rejected() {
        for s in [
            "",
            "url:file:///x",
            "url:file:///x;sha256:zz;size:1",
            "url:file:///x;sha256:".to_string().as_str(),
            &format!("url:file:///x;sha256:{};size:abc", "0".repeat(64)),
            &format!("url:;sha256:{};size:1", "0".repeat(64)),
        ] {
            assert!(StorageRef::parse_tag_value(s).is_err(), "{s}");
        }
    }

    #[test]
    fn unsupported_scheme() {
        assert!(matches!(fetch_url("ftp://x/y", 10), Err(StoreError::BadRef(_))));
    }
}
