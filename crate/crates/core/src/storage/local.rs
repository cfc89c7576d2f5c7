use std::io::ErrorKind;
use std::path::{Component, Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};

use async_trait::async_trait;
use bytes::Bytes;

use super::{Store, StoreError};

/// Files under a local directory, addressed by relative path.
#[derive(Debug)]
pub struct LocalDirStore {
    root: PathBuf,
    requests: AtomicU64,
}

impl LocalDirStore {
    pub fn open(root: impl AsRef<Path>) -> Result<Self, StoreError> {
        let root = root.as_ref();
        if !root.is_dir() {
            return Err(StoreError::StoreUnavailable(format!(
                "{} is not a directory",
                root.display()
            )));
        }
        Ok(Self {
            root: root.to_path_buf(),
            requests: AtomicU64::new(0),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn resolve(&self, key: &str) -> Option<PathBuf> {
        let rel = Path::new(key);
        // keys must stay inside the root
        if rel
            .components()
            .any(|c| !matches!(c, Component::Normal(_) | Component::CurDir))
        {
            return None;
        }
        Some(self.root.join(rel))
    }
}

#[async_trait]
impl Store for LocalDirStore {
    async fn fetch(&self, key: &str) -> Result<Bytes, StoreError> {
        self.requests.fetch_add(1, Ordering::Relaxed);
        let path = self
            .resolve(key)
            .ok_or_else(|| StoreError::KeyNotFound(key.to_string()))?;
        match tokio::fs::read(&path).await {
            Ok(data) => Ok(Bytes::from(data)),
            Err(e) if e.kind() == ErrorKind::NotFound => Err(StoreError::KeyNotFound(key.to_string())),
            Err(e) => Err(StoreError::FetchFailed {
                key: key.to_string(),
                cause: e.to_string(),
            }),
        }
    }

    fn request_count(&self) -> u64 {
        self.requests.load(Ordering::Relaxed)
    }
}
