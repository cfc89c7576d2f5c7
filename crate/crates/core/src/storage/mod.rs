//! Byte stores the dataset reads from, and the bounded cache in front of them.

mod cache;
mod http;
mod latency;
mod local;

use std::fmt;
use std::sync::Arc;

use async_trait::async_trait;
use bytes::Bytes;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clock::SharedClock;
use crate::dataset::ItemRef;

pub use cache::{ByteLruCache, CacheConfig, CacheStats, DEFAULT_CACHE_CAPACITY};
pub use http::{BearerToken, Credentials, HttpObjectStore};
pub use latency::{synthetic_payload, Distribution, LatencyModel, LatencySimStore};
pub use local::LocalDirStore;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum StoreError {
    #[error("key not found: {0}")]
    KeyNotFound(String),
    #[error("fetch of {key} failed: {cause}")]
    FetchFailed { key: String, cause: String },
    #[error("store unavailable: {0}")]
    StoreUnavailable(String),
}

impl StoreError {
    /// Transient failures are the only ones worth retrying.
    pub fn is_transient(&self) -> bool {
        matches!(self, StoreError::FetchFailed { .. })
    }
}

/// A read-only byte store. Implementations accept any number of concurrent
/// `fetch` calls.
#[async_trait]
pub trait Store: Send + Sync + fmt::Debug {
    async fn fetch(&self, key: &str) -> Result<Bytes, StoreError>;

    /// Total requests issued against the backend so far.
    fn request_count(&self) -> u64;
}

pub type SharedStore = Arc<dyn Store>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StoreKind {
    LocalDir,
    HttpObject,
    LatencySim,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoreSpec {
    pub kind: StoreKind,
    #[serde(default)]
    pub root_or_endpoint: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latency_model: Option<LatencyModel>,
    /// Name of an environment variable holding a bearer token.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub auth: Option<String>,
}

impl StoreSpec {
    pub fn latency_sim(model: LatencyModel) -> Self {
        Self {
            kind: StoreKind::LatencySim,
            root_or_endpoint: String::new(),
            latency_model: Some(model),
            auth: None,
        }
    }

    pub fn local_dir(root: impl Into<String>) -> Self {
        Self {
            kind: StoreKind::LocalDir,
            root_or_endpoint: root.into(),
            latency_model: None,
            auth: None,
        }
    }

    pub fn http_object(endpoint: impl Into<String>) -> Self {
        Self {
            kind: StoreKind::HttpObject,
            root_or_endpoint: endpoint.into(),
            latency_model: None,
            auth: None,
        }
    }

    pub fn validate(&self) -> Result<(), StoreError> {
        match (self.kind, &self.latency_model) {
            (StoreKind::LatencySim, None) => Err(StoreError::StoreUnavailable(
                "latency_sim store requires a latency model".into(),
            )),
            (StoreKind::LatencySim, Some(model)) => model
                .validate()
                .map_err(|e| StoreError::StoreUnavailable(format!("invalid latency model: {e}"))),
            (_, Some(_)) => Err(StoreError::StoreUnavailable(
                "latency model is only valid for latency_sim stores".into(),
            )),
            (StoreKind::LocalDir | StoreKind::HttpObject, None) => {
                if self.auth.is_some() && self.kind != StoreKind::HttpObject {
                    return Err(StoreError::StoreUnavailable(
                        "credentials are only valid for http_object stores".into(),
                    ));
                }
                Ok(())
            }
        }
    }
}

/// Opens the store described by `spec`. The latency simulator serves
/// synthetic payloads for `items`; the other backends ignore it.
pub async fn open_store(
    spec: &StoreSpec,
    items: &[ItemRef],
    clock: SharedClock,
) -> Result<SharedStore, StoreError> {
    spec.validate()?;
    match spec.kind {
        StoreKind::LocalDir => Ok(Arc::new(LocalDirStore::open(&spec.root_or_endpoint)?)),
        StoreKind::HttpObject => {
            let credentials: Option<Arc<dyn Credentials>> = match &spec.auth {
                Some(var) => Some(Arc::new(BearerToken::from_env(var)?)),
                None => None,
            };
            Ok(Arc::new(
                HttpObjectStore::connect(&spec.root_or_endpoint, credentials).await?,
            ))
        }
        StoreKind::LatencySim => {
            let model = spec.latency_model.clone().expect("validated");
            Ok(Arc::new(LatencySimStore::new(
                model,
                items.iter().map(|i| (i.key.clone(), i.size_bytes)),
                clock,
            )))
        }
    }
}
