//! Addressable item collections and single-item access.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clock::SharedClock;
use crate::storage::{ByteLruCache, SharedStore, StoreError};
use crate::Span;

/// Mean item size used by the synthetic manifest generator: 115 KB.
pub const DEFAULT_ITEM_SIZE: u64 = 115 * 1024;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ItemRef {
    pub index: usize,
    pub key: String,
    pub size_bytes: u64,
}

/// Synthetic per-item processing cost standing in for decode and augmentation.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum TransformModel {
    #[default]
    None,
    FixedBusy { cost_s: f64 },
    PerByteBusy { cost_s_per_byte: f64 },
}

impl TransformModel {
    pub fn cost(&self, size_bytes: u64) -> Duration {
        let secs = match *self {
            TransformModel::None => 0.0,
            TransformModel::FixedBusy { cost_s } => cost_s,
            TransformModel::PerByteBusy { cost_s_per_byte } => cost_s_per_byte * size_bytes as f64,
        };
        Duration::from_secs_f64(secs.max(0.0))
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub items: Vec<ItemRef>,
    #[serde(default)]
    pub limit: Option<usize>,
    #[serde(default)]
    pub transform: TransformModel,
}

impl DatasetSpec {
    /// Builds a spec from `(key, size)` pairs, numbering items from 0.
    pub fn from_entries(entries: impl IntoIterator<Item = (String, u64)>) -> Self {
        let items = entries
            .into_iter()
            .enumerate()
            .map(|(index, (key, size_bytes))| ItemRef { index, key, size_bytes })
            .collect();
        Self { items, limit: None, transform: TransformModel::None }
    }

    pub fn with_limit(mut self, limit: Option<usize>) -> Self {
        self.limit = limit;
        self
    }

    pub fn with_transform(mut self, transform: TransformModel) -> Self {
        self.transform = transform;
        self
    }

    pub fn len(&self) -> usize {
        match self.limit {
            Some(limit) => self.items.len().min(limit),
            None => self.items.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Items visible after the limit is applied.
    pub fn active_items(&self) -> &[ItemRef] {
        &self.items[..self.len()]
    }

    pub fn total_bytes(&self) -> u64 {
        self.active_items().iter().map(|i| i.size_bytes).sum()
    }
}

pub fn dataset_len(spec: &DatasetSpec) -> usize {
    spec.len()
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestEntry {
    key: String,
    size_bytes: u64,
}

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("manifest io: {0}")]
    Io(#[from] std::io::Error),
    #[error("manifest format: {0}")]
    Format(#[from] serde_json::Error),
}

/// Reads a manifest: a JSON array of `{key, size_bytes}` objects.
pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<ItemRef>, ManifestError> {
    let entries: Vec<ManifestEntry> = serde_json::from_reader(BufReader::new(File::open(path)?))?;
    Ok(entries
        .into_iter()
        .enumerate()
        .map(|(index, e)| ItemRef { index, key: e.key, size_bytes: e.size_bytes })
        .collect())
}

pub fn write_manifest(path: impl AsRef<Path>, items: &[ItemRef]) -> Result<(), ManifestError> {
    let entries: Vec<_> = items
        .iter()
        .map(|i| ManifestEntry { key: i.key.clone(), size_bytes: i.size_bytes })
        .collect();
    serde_json::to_writer(BufWriter::new(File::create(path)?), &entries)?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SizeDistribution {
    Fixed { bytes: u64 },
    Lognormal { median_bytes: u64, sigma: f64 },
}

impl Default for SizeDistribution {
    fn default() -> Self {
        SizeDistribution::Fixed { bytes: DEFAULT_ITEM_SIZE }
    }
}

/// Synthetic manifest of `n` items keyed `items/{index:06}.bin`.
pub fn generate_manifest(n: usize, sizes: SizeDistribution, seed: u64) -> Vec<ItemRef> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lognormal = match sizes {
        SizeDistribution::Lognormal { median_bytes, sigma } => {
            Some(LogNormal::new((median_bytes.max(1) as f64).ln(), sigma.max(0.0)).expect("finite parameters"))
        }
        SizeDistribution::Fixed { .. } => None,
    };
    (0..n)
        .map(|index| {
            let size_bytes = match (sizes, &lognormal) {
                (SizeDistribution::Fixed { bytes }, _) => bytes,
                (_, Some(dist)) => dist.sample(&mut rng).round().max(1.0) as u64,
                _ => unreachable!(),
            };
            ItemRef { index, key: format!("items/{index:06}.bin"), size_bytes }
        })
        .collect()
}

/// 64-bit content checksum (XXH3).
pub fn payload_digest(bytes: &[u8]) -> u64 {
    twox_hash::xxh3::hash64(bytes)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub item: ItemRef,
    pub payload_digest: u64,
    /// Covers the fetch and the transform.
    pub fetch_span: Span,
    /// Part of `fetch_span` spent in the transform model.
    pub transform_s: f64,
    pub cache_hit: bool,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ItemError {
    #[error("index {index} out of range for dataset of length {len}")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("fetching {key} failed: {cause}")]
    FetchFailed { key: String, cause: StoreError },
    #[error("{key}: expected {expected} bytes, store returned {actual}")]
    SizeMismatch { key: String, expected: u64, actual: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub backoff_base_s: f64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self { max_retries: 0, backoff_base_s: 0.1 }
    }
}

impl RetryPolicy {
    /// Wait before retry number `attempt` (0-based).
    pub fn backoff(&self, attempt: u32) -> Duration {
        Duration::from_secs_f64(self.backoff_base_s.max(0.0) * 2f64.powi(attempt as i32))
    }
}

/// A dataset bound to its store: the single-item access layer.
#[derive(Debug, Clone)]
pub struct Dataset {
    spec: Arc<DatasetSpec>,
    store: SharedStore,
    cache: Option<Arc<ByteLruCache>>,
    clock: SharedClock,
    retry: RetryPolicy,
}

impl Dataset {
    pub fn new(spec: DatasetSpec, store: SharedStore, clock: SharedClock) -> Self {
        Self {
            spec: Arc::new(spec),
            store,
            cache: None,
            clock,
            retry: RetryPolicy::default(),
        }
    }

    pub fn with_cache(mut self, cache: Arc<ByteLruCache>) -> Self {
        self.cache = Some(cache);
        self
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn spec(&self) -> &DatasetSpec {
        &self.spec
    }

    pub fn store(&self) -> &SharedStore {
        &self.store
    }

    pub fn cache(&self) -> Option<&Arc<ByteLruCache>> {
        self.cache.as_ref()
    }

    pub fn clock(&self) -> &SharedClock {
        &self.clock
    }

    pub fn len(&self) -> usize {
        self.spec.len()
    }

    pub fn is_empty(&self) -> bool {
        self.spec.is_empty()
    }

    pub async fn get_item(&self, index: usize) -> Result<Sample, ItemError> {
        let len = self.len();
        let item = self
            .spec
            .items
            .get(index)
            .filter(|_| index < len)
            .ok_or(ItemError::IndexOutOfRange { index, len })?;

        let start = self.clock.now();
        let (bytes, cache_hit) = self.fetch_with_retry(&item.key).await?;
        if bytes.len() as u64 != item.size_bytes {
            return Err(ItemError::SizeMismatch {
                key: item.key.clone(),
                expected: item.size_bytes,
                actual: bytes.len() as u64,
            });
        }
        let payload_digest = payload_digest(&bytes);
        drop(bytes);

        let cost = self.spec.transform.cost(item.size_bytes);
        let transform_start = self.clock.now();
        if !cost.is_zero() {
            self.clock.busy(cost).await;
        }
        let end = self.clock.now();
        Ok(Sample {
            item: item.clone(),
            payload_digest,
            fetch_span: Span::new(start, end),
            transform_s: end - transform_start,
            cache_hit,
        })
    }

    /// Draws a uniform index from `rng` and fetches it.
    pub async fn get_random_item(&self, rng: &mut impl Rng) -> Result<Sample, ItemError> {
        let index = self.random_index(rng)?;
        self.get_item(index).await
    }

    pub fn random_index(&self, rng: &mut impl Rng) -> Result<usize, ItemError> {
        match self.len() {
            0 => Err(ItemError::EmptyDataset),
            len => Ok(rng.gen_range(0..len)),
        }
    }

    async fn fetch_with_retry(&self, key: &str) -> Result<(bytes::Bytes, bool), ItemError> {
        let mut attempt = 0;
        loop {
            let result = match &self.cache {
                Some(cache) => cache.cached_fetch(self.store.as_ref(), key).await,
                None => self.store.fetch(key).await.map(|b| (b, false)),
            };
            match result {
                Ok(hit) => return Ok(hit),
                Err(e) if e.is_transient() && attempt < self.retry.max_retries => {
                    log::debug!("retrying {key} after: {e}");
                    self.clock.sleep(self.retry.backoff(attempt)).await;
                    attempt += 1;
                }
                Err(cause) => {
                    return Err(ItemError::FetchFailed { key: key.to_string(), cause })
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use std::collections::HashMap;
    use std::sync::atomic::{AtomicU32, Ordering};

    use async_trait::async_trait;
    use bytes::Bytes;

    use super::*;
    use crate::clock::VirtualClock;
    use crate::storage::{synthetic_payload, LatencyModel, LatencySimStore, Store};

    fn sim(n: usize, latency_ms: u64, clock: SharedClock) -> Dataset {
        let spec = DatasetSpec::from_entries((0..n).map(|i| (format!("k{i}"), 256)));
        let store = LatencySimStore::new(
            LatencyModel::fixed(Duration::from_millis(latency_ms)),
            spec.items.iter().map(|i| (i.key.clone(), i.size_bytes)),
            clock.clone(),
        );
        Dataset::new(spec, Arc::new(store), clock)
    }

    #[test]
    fn len_respects_limit() {
        let items = generate_manifest(20000, SizeDistribution::default(), 0);
        let spec = DatasetSpec { items, limit: Some(15000), transform: TransformModel::None };
        assert_eq!(dataset_len(&spec), 15000);
        assert_eq!(dataset_len(&DatasetSpec::default()), 0);
        let spec = DatasetSpec::from_entries((0..10).map(|i| (i.to_string(), 1)));
        assert_eq!(dataset_len(&spec), 10);
        assert_eq!(dataset_len(&spec.clone().with_limit(Some(50))), 10);
    }

    #[tokio::test(start_paused = true)]
    async fn span_covers_latency_plus_transform() {
        let clock = VirtualClock::shared();
        let mut ds = sim(4, 100, clock.clone());
        let spec = ds.spec().clone().with_transform(TransformModel::FixedBusy { cost_s: 0.02 });
        ds.spec = Arc::new(spec);
        let sample = ds.get_item(0).await.unwrap();
        assert!((sample.fetch_span.duration() - 0.12).abs() < 1e-9);
        assert!((sample.transform_s - 0.02).abs() < 1e-9);
        assert!(!sample.cache_hit);
    }

    #[tokio::test(start_paused = true)]
    async fn out_of_range_and_limit_boundary() {
        let ds = sim(4, 1, VirtualClock::shared());
        assert_eq!(ds.get_item(4).await, Err(ItemError::IndexOutOfRange { index: 4, len: 4 }));
        let mut limited = ds.clone();
        limited.spec = Arc::new(ds.spec().clone().with_limit(Some(2)));
        assert_eq!(limited.get_item(2).await, Err(ItemError::IndexOutOfRange { index: 2, len: 2 }));
    }

    #[tokio::test(start_paused = true)]
    async fn content_matches_store_and_is_deterministic() {
        let ds = sim(8, 1, VirtualClock::shared());
        for i in 0..8 {
            let a = ds.get_item(i).await.unwrap();
            let b = ds.get_item(i).await.unwrap();
            assert_eq!(a.payload_digest, b.payload_digest);
            let direct = ds.store().fetch(&a.item.key).await.unwrap();
            assert_eq!(a.payload_digest, payload_digest(&direct));
        }
    }

    #[tokio::test(start_paused = true)]
    async fn random_item_is_seed_reproducible() {
        let ds = sim(2000, 0, VirtualClock::shared());
        let draw = |seed| {
            let ds = ds.clone();
            async move {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                ds.get_random_item(&mut rng).await.unwrap().item.index
            }
        };
        assert_eq!(draw(42).await, draw(42).await);
        let single = sim(1, 0, VirtualClock::shared());
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            assert_eq!(single.get_random_item(&mut rng).await.unwrap().item.index, 0);
        }
        let empty = sim(0, 0, VirtualClock::shared());
        assert_eq!(empty.get_random_item(&mut rng).await, Err(ItemError::EmptyDataset));
    }

    #[test]
    fn random_index_frequencies_are_uniform() {
        let clock: SharedClock = Arc::new(crate::clock::MonotonicClock::new());
        let rt = tokio::runtime::Builder::new_current_thread().enable_all().build().unwrap();
        let ds = rt.block_on(async { sim(2000, 0, clock) });
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let draws = 10_000;
        let mut counts = vec![0u32; 2000];
        for _ in 0..draws {
            counts[ds.random_index(&mut rng).unwrap()] += 1;
        }
        // binomial(10000, 1/2000): mean 5, sigma ~ 2.236
        let p = 1.0 / 2000.0;
        let mean = draws as f64 * p;
        let sigma = (draws as f64 * p * (1.0 - p)).sqrt();
        assert!(counts.iter().all(|&c| (c as f64 - mean).abs() <= 5.0 * sigma));
        let chi2: f64 = counts.iter().map(|&c| (c as f64 - mean).powi(2) / mean).sum();
        // df = 1999, 5-sigma upper bound of chi-square: df + 5*sqrt(2 df)
        assert!(chi2 < 1999.0 + 5.0 * (2.0f64 * 1999.0).sqrt(), "chi2 {chi2}");
    }

    #[derive(Debug)]
    struct Flaky {
        failures_left: AtomicU32,
        requests: AtomicU32,
        content: HashMap<String, Bytes>,
    }

    #[async_trait]
    impl Store for Flaky {
        async fn fetch(&self, key: &str) -> Result<Bytes, StoreError> {
            self.requests.fetch_add(1, Ordering::SeqCst);
            if self
                .failures_left
                .fetch_update(Ordering::SeqCst, Ordering::SeqCst, |n| n.checked_sub(1))
                .is_ok()
            {
                return Err(StoreError::FetchFailed { key: key.into(), cause: "reset".into() });
            }
            self.content.get(key).cloned().ok_or_else(|| StoreError::KeyNotFound(key.into()))
        }
        fn request_count(&self) -> u64 {
            self.requests.load(Ordering::SeqCst) as u64
        }
    }

    fn flaky(failures: u32) -> Arc<Flaky> {
        Arc::new(Flaky {
            failures_left: AtomicU32::new(failures),
            requests: AtomicU32::new(0),
            content: [("a".to_string(), synthetic_payload("a", 8))].into_iter().collect(),
        })
    }

    #[tokio::test(start_paused = true)]
    async fn retries_with_exponential_backoff() {
        let clock = VirtualClock::shared();
        let spec = DatasetSpec::from_entries([("a".to_string(), 8)]);
        let store = flaky(2);
        let ds = Dataset::new(spec.clone(), store.clone(), clock.clone())
            .with_retry(RetryPolicy { max_retries: 2, backoff_base_s: 0.1 });
        let t0 = clock.now();
        ds.get_item(0).await.unwrap();
        // 0.1 + 0.2
        assert!((clock.now() - t0 - 0.3).abs() < 1e-9);
        assert_eq!(store.request_count(), 3);

        let ds = Dataset::new(spec, flaky(1), clock);
        assert!(matches!(ds.get_item(0).await, Err(ItemError::FetchFailed { .. })));
    }

    #[tokio::test(start_paused = true)]
    async fn size_mismatch_is_reported() {
        let clock = VirtualClock::shared();
        let spec = DatasetSpec::from_entries([("a".to_string(), 9)]);
        let ds = Dataset::new(spec, flaky(0), clock);
        assert!(matches!(ds.get_item(0).await, Err(ItemError::SizeMismatch { .. })));
    }

    #[test]
    fn manifest_round_trip_and_lognormal_sizes() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        let items = generate_manifest(
            500,
            SizeDistribution::Lognormal { median_bytes: DEFAULT_ITEM_SIZE, sigma: 0.5 },
            3,
        );
        write_manifest(&path, &items).unwrap();
        assert_eq!(read_manifest(&path).unwrap(), items);
        let mut sizes: Vec<_> = items.iter().map(|i| i.size_bytes).collect();
        sizes.sort_unstable();
        let median = sizes[250] as f64;
        assert!((median / DEFAULT_ITEM_SIZE as f64 - 1.0).abs() < 0.15, "{median}");
    }

    #[test]
    fn transform_costs() {
        assert_eq!(TransformModel::None.cost(1 << 20), Duration::ZERO);
        assert_eq!(TransformModel::FixedBusy { cost_s: 0.5 }.cost(7), Duration::from_millis(500));
        let per_byte = TransformModel::PerByteBusy { cost_s_per_byte: 1e-6 };
        assert!((per_byte.cost(2000).as_secs_f64() - 0.002).abs() < 1e-12);
    }
}
