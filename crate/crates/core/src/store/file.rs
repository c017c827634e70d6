use std::io::Write;
use std::path::{Path, PathBuf};

use super::{blob_file_name, ModelStore, StoreError};

/// Blobs stored as `<root>/model_<sha256>.bin`, exposed as `file://` URLs.
#[derive(Debug, Clone)]
pub struct FileStore {
    root: PathBuf,
}

impl FileStore {
    /// Creates `root` if needed.
    pub fn new(root: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let root = root.into();
        std::fs::create_dir_all(&root).map_err(|e| StoreError::Write(format!("{}: {e}", root.display())))?;
        let root = root
            .canonicalize()
            .map_err(|e| StoreError::Write(format!("{}: {e}", root.display())))?;
        Ok(Self { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path_for(&self, sha256: &str) -> PathBuf {
        self.root.join(blob_file_name(sha256))
    }
}

impl ModelStore for FileStore {
    fn write_blob(&self, sha256: &str, blob: &[u8]) -> Result<String, StoreError> {
        let dest = self.path_for(sha256);
        let err = |e: std::io::Error| StoreError::Write(format!("{}: {e}", dest.display()));
        let mut tmp = tempfile::NamedTempFile::new_in(&self.root).map_err(err)?;
        tmp.write_all(blob).map_err(err)?;
        tmp.as_file().sync_all().map_err(err)?;
        tmp.persist(&dest).map_err(|e| err(e.error))?;
        url::Url::from_file_path(&dest)
            .map(String::from)
            .map_err(|_| StoreError::Write(format!("{} is not absolute", dest.display())))
    }
}
