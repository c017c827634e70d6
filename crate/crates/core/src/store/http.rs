use super::{blob_file_name, ModelStore, StoreError, DEFAULT_MAX_BLOB_BYTES};

/// Plain HTTP blob server: `PUT <base>/model_<sha256>.bin`, then `GET` the
/// same URL.
#[derive(Debug, Clone)]
pub struct HttpStore {
    base_url: String,
    max_blob_bytes: u64,
}

impl HttpStore {
    pub fn new(base_url: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into().trim_end_matches('/').to_string(),
            max_blob_bytes: DEFAULT_MAX_BLOB_BYTES,
        }
    }

    pub fn with_max_blob_bytes(mut self, max: u64) -> Self {
        self.max_blob_bytes = max;
        self
    }
}

impl ModelStore for HttpStore {
    fn write_blob(&self, sha256: &str, blob: &[u8]) -> Result<String, StoreError> {
        let url = format!("{}/{}", self.base_url, blob_file_name(sha256));
        ureq::put(&url)
            .set("Content-Type", "application/octet-stream")
            .send_bytes(blob)
            .map_err(|e| StoreError::Write(format!("{url}: {e}")))?;
        Ok(url)
    }

    fn max_blob_bytes(&self) -> u64 {
        self.max_blob_bytes
    }
}
