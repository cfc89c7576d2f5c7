//! Concurrent data loading over local and object storage.
//!
//! The pipeline is layered like a training data loader: a [`loader::Loader`]
//! owns a pool of workers, each worker drives a fetch [`strategy`] over the
//! batch plans produced by the [`sampler`], and every item goes through
//! [`dataset::Dataset::get_item`] into a [`storage::Store`], optionally via
//! the byte-bounded LRU cache. Every layer stamps its work with the injected
//! [`clock::Clock`] so that [`metrics`] can derive throughput and idle time,
//! and so that tests can run on simulated time.

pub mod clock;
pub mod dataset;
pub mod iter;
pub mod loader;
pub mod metrics;
pub mod sampler;
pub mod storage;
pub mod strategy;

use serde::{Deserialize, Serialize};

/// Closed time interval in clock seconds.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Span {
    pub start: f64,
    pub end: f64,
}

impl Span {
    pub fn new(start: f64, end: f64) -> Self {
        debug_assert!(end >= start, "span ends before it starts: {start} > {end}");
        Self { start, end }
    }

    pub fn at(t: f64) -> Self {
        Self { start: t, end: t }
    }

    pub fn duration(&self) -> f64 {
        self.end - self.start
    }
}

pub use clock::{Clock, MonotonicClock, SharedClock, VirtualClock};
pub use dataset::{Dataset, DatasetSpec, ItemError, ItemRef, Sample, TransformModel};
pub use loader::{Loader, LoaderConfig, LoaderError, LoaderState};
pub use sampler::{make_epoch_plan, BatchPlan, EpochPlan};
pub use storage::{open_store, Store, StoreError, StoreSpec};
pub use strategy::{Batch, BatchError, StrategyConfig, StrategyKind};
