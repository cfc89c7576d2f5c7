use std::path::PathBuf;

use loadkit_core::dataset::{ItemError, ManifestError};
use loadkit_core::metrics::MetricsError;
use loadkit_core::{LoaderError, StoreError};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config error: {0}")]
    Config(String),
    #[error("store failure: {0}")]
    Store(#[from] StoreError),
    #[error("fetch failed: {0}")]
    Fetch(#[from] ItemError),
    #[error(transparent)]
    Loader(LoaderError),
    #[error("manifest: {0}")]
    Manifest(#[from] ManifestError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl From<LoaderError> for HarnessError {
    fn from(e: LoaderError) -> Self {
        match e {
            LoaderError::InvalidConfig(m) => HarnessError::Config(m),
            other => HarnessError::Loader(other),
        }
    }
}

impl HarnessError {
    pub fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Self {
        let path = path.into();
        move |source| HarnessError::Io { path, source }
    }

    /// Process exit code: 2 for configuration problems, 3 for store failures.
    pub fn exit_code(&self) -> u8 {
        match self {
            HarnessError::Config(_) | HarnessError::Manifest(_) => 2,
            HarnessError::Store(_) | HarnessError::Fetch(_) => 3,
            _ => 1,
        }
    }
}
