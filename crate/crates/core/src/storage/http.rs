//! Plain `GET {endpoint}/{key}` object store.

use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use async_trait::async_trait;
use bytes::Bytes;
use reqwest::{Client, RequestBuilder, StatusCode, Url};

use super::{Store, StoreError};

/// Attaches credentials to outgoing requests.
pub trait Credentials: Send + Sync + fmt::Debug {
    fn authorize(&self, request: RequestBuilder) -> RequestBuilder;
}

pub struct BearerToken(String);

impl BearerToken {
    pub fn new(token: impl Into<String>) -> Self {
        Self(token.into())
    }

    pub fn from_env(var: &str) -> Result<Self, StoreError> {
        std::env::var(var)
            .map(Self)
            .map_err(|_| StoreError::StoreUnavailable(format!("credentials variable {var} is not set")))
    }
}

impl fmt::Debug for BearerToken {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("BearerToken(..)")
    }
}

impl Credentials for BearerToken {
    fn authorize(&self, request: RequestBuilder) -> RequestBuilder {
        request.bearer_auth(&self.0)
    }
}

#[derive(Debug)]
pub struct HttpObjectStore {
    endpoint: Url,
    client: Client,
    credentials: Option<Arc<dyn Credentials>>,
    requests: AtomicU64,
}

impl HttpObjectStore {
    /// Parses the endpoint and probes it once; any HTTP response counts as
    /// reachable.
    pub async fn connect(
        endpoint: &str,
        credentials: Option<Arc<dyn Credentials>>,
    ) -> Result<Self, StoreError> {
        let mut endpoint = Url::parse(endpoint)
            .map_err(|e| StoreError::StoreUnavailable(format!("bad endpoint {endpoint:?}: {e}")))?;
        if !endpoint.path().ends_with('/') {
            let path = format!("{}/", endpoint.path());
            endpoint.set_path(&path);
        }
        let client = Client::builder()
            .connect_timeout(Duration::from_secs(5))
            .build()
            .map_err(|e| StoreError::StoreUnavailable(e.to_string()))?;
        let store = Self {
            endpoint,
            client,
            credentials,
            requests: AtomicU64::new(0),
        };
        store
            .request(store.endpoint.clone())
            .send()
            .await
            .map_err(|e| StoreError::StoreUnavailable(format!("{}: {e}", store.endpoint)))?;
        Ok(store)
    }

    pub fn endpoint(&self) -> &Url {
        &self.endpoint
    }

    fn request(&self, url: Url) -> RequestBuilder {
        let request = self.client.get(url);
        match &self.credentials {
            Some(c) => c.authorize(request),
            None => request,
        }
    }
}

#[async_trait]
impl Store for HttpObjectStore {
    async fn fetch(&self, key: &str) -> Result<Bytes, StoreError> {
        self.requests.fetch_add(1, Ordering::Relaxed);
        let failed = |cause: String| StoreError::FetchFailed {
            key: key.to_string(),
            cause,
        };
        let url = self
            .endpoint
            .join(key.trim_start_matches('/'))
            .map_err(|e| failed(e.to_string()))?;
        let response = self.request(url).send().await.map_err(|e| failed(e.to_string()))?;
        match response.status() {
            StatusCode::OK => response.bytes().await.map_err(|e| failed(e.to_string())),
            StatusCode::NOT_FOUND => Err(StoreError::KeyNotFound(key.to_string())),
            status => Err(failed(format!("HTTP {status}"))),
        }
    }

    fn request_count(&self) -> u64 {
        self.requests.load(Ordering::Relaxed)
    }
}
