//! Blocking iterator over a loader run, for embedding in host languages.
//!
//! [`BatchIter`] owns its own tokio runtime and yields one
//! [`BatchRecord`] per batch: identifiers and payload digests only, never
//! the payload buffers. Errors keep the name of the underlying core error
//! through [`IterError::error_name`].

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio::runtime::Runtime;

use crate::clock::{runtime_for, MonotonicClock, SharedClock, VirtualClock};
use crate::dataset::{read_manifest, Dataset, DatasetSpec, ManifestError};
use crate::loader::{Loader, LoaderConfig, LoaderError};
use crate::sampler::make_epoch_plan;
use crate::storage::{open_store, ByteLruCache, CacheConfig, StoreError, StoreKind, StoreSpec};
use crate::strategy::{StrategyConfig, StrategyKind, DEFAULT_FETCH_WORKERS};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BoundLoaderConfig {
    pub batch_size: usize,
    pub shuffle: bool,
    pub seed: u64,
    pub drop_last: bool,
    pub epochs: u32,
    pub num_workers: usize,
    pub prefetch_factor: usize,
    pub num_fetch_workers: usize,
    pub batch_pool: usize,
    /// Defaults to pooled disassembly when `batch_pool > 0`, else intra-batch.
    pub strategy: Option<StrategyKind>,
    pub worker_startup_delay_s: f64,
    pub in_order: bool,
    pub cache_capacity_bytes: Option<u64>,
}

impl Default for BoundLoaderConfig {
    fn default() -> Self {
        let loader = LoaderConfig::default();
        Self {
            batch_size: 64,
            shuffle: true,
            seed: 0,
            drop_last: false,
            epochs: 1,
            num_workers: loader.num_workers,
            prefetch_factor: loader.prefetch_factor,
            num_fetch_workers: DEFAULT_FETCH_WORKERS,
            batch_pool: 0,
            strategy: None,
            worker_startup_delay_s: 0.0,
            in_order: true,
            cache_capacity_bytes: None,
        }
    }
}

impl BoundLoaderConfig {
    pub fn strategy_config(&self) -> StrategyConfig {
        let kind = self.strategy.unwrap_or(if self.batch_pool > 0 {
            StrategyKind::PooledDisassembly
        } else {
            StrategyKind::IntraBatch
        });
        match kind {
            StrategyKind::Sequential => StrategyConfig::sequential(),
            kind => StrategyConfig { kind, num_fetch_workers: self.num_fetch_workers, batch_pool: self.batch_pool },
        }
    }

    pub fn loader_config(&self) -> LoaderConfig {
        LoaderConfig {
            num_workers: self.num_workers,
            prefetch_factor: self.prefetch_factor,
            strategy: self.strategy_config(),
            worker_startup_delay_s: self.worker_startup_delay_s,
            in_order: self.in_order,
            ..LoaderConfig::default()
        }
    }

    pub fn validate(&self) -> Result<(), IterError> {
        if self.batch_size == 0 {
            return Err(IterError::InvalidConfig("batch_size must be at least 1".into()));
        }
        self.loader_config().validate().map_err(IterError::from)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchRecord {
    pub epoch: u32,
    pub batch_id: u64,
    pub indices: Vec<usize>,
    pub digests: Vec<u64>,
}

#[derive(Debug, Error)]
pub enum IterError {
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Manifest(#[from] ManifestError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Loader(LoaderError),
    #[error("runtime: {0}")]
    Runtime(#[from] std::io::Error),
}

impl From<LoaderError> for IterError {
    fn from(e: LoaderError) -> Self {
        match e {
            LoaderError::InvalidConfig(m) => IterError::InvalidConfig(m),
            other => IterError::Loader(other),
        }
    }
}

impl IterError {
    /// Name of the core error, for mapping onto host exception types.
    pub fn error_name(&self) -> &'static str {
        match self {
            IterError::InvalidConfig(_) => "InvalidConfig",
            IterError::Manifest(_) => "ManifestError",
            IterError::Store(StoreError::KeyNotFound(_)) => "KeyNotFound",
            IterError::Store(StoreError::FetchFailed { .. }) => "FetchFailed",
            IterError::Store(StoreError::StoreUnavailable(_)) => "StoreUnavailable",
            IterError::Loader(e) => e.name(),
            IterError::Runtime(_) => "RuntimeError",
        }
    }
}

pub struct BatchIter {
    config: BoundLoaderConfig,
    runtime: Runtime,
    dataset: Dataset,
    epoch: u32,
    loader: Option<Loader>,
    finished: bool,
}

impl std::fmt::Debug for BatchIter {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("BatchIter")
            .field("config", &self.config)
            .field("epoch", &self.epoch)
            .field("finished", &self.finished)
            .finish()
    }
}

impl BatchIter {
    /// Latency-simulated stores run on virtual time, others on wall time.
    pub fn new(config: BoundLoaderConfig, manifest: impl AsRef<Path>, store: StoreSpec) -> Result<Self, IterError> {
        config.validate()?;
        let items = read_manifest(manifest)?;
        let virtual_time = store.kind == StoreKind::LatencySim;
        let runtime = runtime_for(virtual_time)?;
        let dataset = runtime.block_on(async {
            let clock: SharedClock = if virtual_time { VirtualClock::shared() } else { MonotonicClock::shared() };
            let backend = open_store(&store, &items, clock.clone()).await?;
            let mut dataset = Dataset::new(DatasetSpec { items, ..DatasetSpec::default() }, backend, clock);
            if let Some(capacity_bytes) = config.cache_capacity_bytes {
                dataset = dataset.with_cache(Arc::new(ByteLruCache::new(CacheConfig { capacity_bytes })));
            }
            Ok::<_, IterError>(dataset)
        })?;
        Ok(Self { config, runtime, dataset, epoch: 0, loader: None, finished: false })
    }

    pub fn config(&self) -> &BoundLoaderConfig {
        &self.config
    }

    fn open_epoch(&mut self) -> Result<(), IterError> {
        let plan = make_epoch_plan(
            self.dataset.len(),
            self.config.batch_size,
            self.config.shuffle,
            self.config.drop_last,
            self.config.seed,
            self.epoch,
        );
        self.loader = Some(Loader::new(self.config.loader_config(), self.dataset.clone(), plan)?);
        Ok(())
    }
}

impl Iterator for BatchIter {
    type Item = Result<BatchRecord, IterError>;

    fn next(&mut self) -> Option<Self::Item> {
        while !self.finished {
            if self.epoch >= self.config.epochs {
                self.finished = true;
                break;
            }
            if self.loader.is_none() {
                if let Err(e) = self.open_epoch() {
                    self.finished = true;
                    return Some(Err(e));
                }
            }
            let loader = self.loader.as_mut().expect("opened above");
            match self.runtime.block_on(loader.next_batch()) {
                Ok(Some(batch)) => {
                    return Some(Ok(BatchRecord {
                        epoch: self.epoch,
                        batch_id: batch.batch_id,
                        indices: batch.indices(),
                        digests: batch.samples.iter().map(|s| s.payload_digest).collect(),
                    }))
                }
                Ok(None) => {
                    let mut done = self.loader.take().expect("opened above");
                    self.runtime.block_on(done.shutdown());
                    self.epoch += 1;
                }
                Err(e @ LoaderError::BatchFailed { .. }) => return Some(Err(e.into())),
                Err(e) => {
                    self.finished = true;
                    return Some(Err(e.into()));
                }
            }
        }
        None
    }
}

impl Drop for BatchIter {
    fn drop(&mut self) {
        if let Some(mut loader) = self.loader.take() {
            self.runtime.block_on(loader.shutdown());
        }
    }
}
