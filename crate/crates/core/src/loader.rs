//! Worker-pool data loader with prefetch backpressure and lazy startup.
//!
//! Plans are assigned to workers round-robin by position in the epoch plan.
//! Each worker holds `prefetch_factor` permits; a permit is taken before a
//! plan is loaded and released only when the consumer receives that batch,
//! so at most `num_workers * prefetch_factor` batches are ever resident.
//!
//! Construction does no work. The first [`Loader::next_batch`] call starts a
//! background task that creates workers one at a time, each paying
//! `worker_startup_delay`, and lets every worker begin fetching as soon as it
//! exists. [`StartupMode::Blocking`] instead creates every worker before any
//! of them may fetch, which is the reference behaviour lazy startup avoids.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio::sync::{mpsc, OwnedSemaphorePermit, Semaphore};
use tokio::task::JoinHandle;

use crate::dataset::{Dataset, ItemError};
use crate::metrics::{EventKind, EventLog, EventRecord};
use crate::sampler::{BatchPlan, EpochPlan};
use crate::strategy::{
    fetch_batch_concurrent, fetch_batch_sequential, fetch_pooled_group, Batch, BatchError,
    FetchGauge, StrategyConfig, StrategyKind,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StartupMode {
    #[default]
    Lazy,
    Blocking,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoaderConfig {
    pub num_workers: usize,
    pub prefetch_factor: usize,
    #[serde(default)]
    pub strategy: StrategyConfig,
    #[serde(default)]
    pub worker_startup_delay_s: f64,
    #[serde(default = "default_in_order")]
    pub in_order: bool,
    #[serde(default)]
    pub startup: StartupMode,
}

fn default_in_order() -> bool {
    true
}

impl Default for LoaderConfig {
    fn default() -> Self {
        Self {
            num_workers: 4,
            prefetch_factor: 4,
            strategy: StrategyConfig::default(),
            worker_startup_delay_s: 0.0,
            in_order: true,
            startup: StartupMode::Lazy,
        }
    }
}

impl LoaderConfig {
    pub fn validate(&self) -> Result<(), LoaderError> {
        let invalid = |m: String| Err(LoaderError::InvalidConfig(m));
        if self.num_workers == 0 {
            return invalid("num_workers must be at least 1".into());
        }
        if self.prefetch_factor == 0 {
            return invalid("prefetch_factor must be at least 1".into());
        }
        if !(self.worker_startup_delay_s.is_finite() && self.worker_startup_delay_s >= 0.0) {
            return invalid(format!("worker_startup_delay_s must be >= 0, got {}", self.worker_startup_delay_s));
        }
        self.strategy.validate().map_err(LoaderError::InvalidConfig)
    }

    /// Upper bound on batches loaded and waiting for the consumer.
    pub fn max_resident(&self) -> usize {
        self.num_workers * self.prefetch_factor
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LoaderError {
    #[error("invalid loader config: {0}")]
    InvalidConfig(String),
    #[error("batch {batch_id} failed: {cause}")]
    BatchFailed { batch_id: u64, cause: ItemError },
    #[error("loader is shut down")]
    Shutdown,
    #[error("workers exited before the epoch was delivered")]
    WorkersExited,
}

impl LoaderError {
    pub fn name(&self) -> &'static str {
        match self {
            LoaderError::InvalidConfig(_) => "InvalidConfig",
            LoaderError::BatchFailed { .. } => "BatchFailed",
            LoaderError::Shutdown => "Shutdown",
            LoaderError::WorkersExited => "WorkersExited",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Constructed,
    Running,
    /// Every plan has been handed to a worker.
    Draining,
    Shutdown,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoaderState {
    pub phase: Phase,
    pub dispatched_batches: u64,
    pub delivered_batches: u64,
    pub resident_ready: usize,
    pub resident_high_water: usize,
    /// Highest per-worker count of concurrent item fetches.
    pub in_flight_high_water: usize,
    pub constructed_at: f64,
    pub started_at: Option<f64>,
    /// When the first worker began its first plan.
    pub first_fetch_at: Option<f64>,
}

#[derive(Debug, Default)]
struct Shared {
    dispatched: AtomicU64,
    resident: AtomicUsize,
    resident_high_water: AtomicUsize,
    first_fetch_at: Mutex<Option<f64>>,
    gauges: Vec<FetchGauge>,
}

impl Shared {
    fn mark_dispatch(&self, plans: usize, now: f64) {
        self.dispatched.fetch_add(plans as u64, Ordering::SeqCst);
        let mut first = self.first_fetch_at.lock().expect("loader state poisoned");
        first.get_or_insert(now);
    }
}

struct Ready {
    batch_id: u64,
    result: Result<Batch, BatchError>,
    _permit: OwnedSemaphorePermit,
}

/// Everything a worker needs, cloned out of the loader at start.
#[derive(Clone)]
struct WorkerContext {
    dataset: Dataset,
    strategy: StrategyConfig,
    prefetch_factor: usize,
    shared: Arc<Shared>,
    log: Option<Arc<EventLog>>,
    epoch: u32,
    tx: mpsc::UnboundedSender<Ready>,
}

impl WorkerContext {
    /// Returns `false` once the loader is gone.
    fn deliver(&self, worker: usize, result: Result<Batch, BatchError>, permit: OwnedSemaphorePermit) -> bool {
        if let (Some(log), Ok(batch)) = (&self.log, &result) {
            log.record_batch(batch, self.epoch, Some(worker), self.dataset.cache().is_some());
        }
        let batch_id = match &result {
            Ok(b) => b.batch_id,
            Err(e) => e.batch_id,
        };
        let now = self.shared.resident.fetch_add(1, Ordering::SeqCst) + 1;
        self.shared.resident_high_water.fetch_max(now, Ordering::SeqCst);
        self.tx.send(Ready { batch_id, result, _permit: permit }).is_ok()
    }

    async fn run(self, worker: usize, plans: Vec<BatchPlan>) {
        let permits = Arc::new(Semaphore::new(self.prefetch_factor));
        let gauge = &self.shared.gauges[worker];
        let clock = self.dataset.clock().clone();
        let pooled = self.strategy.kind == StrategyKind::PooledDisassembly && self.strategy.batch_pool > 0;
        if pooled {
            let batch_size = plans.first().map_or(1, |p| p.indices.len());
            // a group can never need more permits than the worker owns
            let per_group = self.strategy.plans_per_pool(batch_size).min(self.prefetch_factor);
            for group in plans.chunks(per_group) {
                let mut held = Vec::with_capacity(group.len());
                for _ in group {
                    held.push(permits.clone().acquire_owned().await.expect("semaphore never closes"));
                }
                self.shared.mark_dispatch(group.len(), clock.now());
                let mut alive = true;
                fetch_pooled_group(&self.dataset, group, self.strategy.num_fetch_workers, gauge, &mut |result| {
                    let permit = held.pop().expect("one permit per plan");
                    alive &= self.deliver(worker, result, permit);
                })
                .await;
                if !alive {
                    return;
                }
            }
        } else {
            for plan in &plans {
                let permit = permits.clone().acquire_owned().await.expect("semaphore never closes");
                self.shared.mark_dispatch(1, clock.now());
                let result = match self.strategy.kind {
                    StrategyKind::Sequential => fetch_batch_sequential(&self.dataset, plan, gauge).await,
                    _ => fetch_batch_concurrent(&self.dataset, plan, self.strategy.num_fetch_workers, gauge).await,
                };
                if !self.deliver(worker, result, permit) {
                    return;
                }
            }
        }
    }
}

pub struct Loader {
    config: LoaderConfig,
    dataset: Dataset,
    plan: Arc<EpochPlan>,
    log: Option<Arc<EventLog>>,
    shared: Arc<Shared>,
    constructed_at: f64,
    started_at: Option<f64>,
    rx: Option<mpsc::UnboundedReceiver<Ready>>,
    reorder: BTreeMap<u64, Ready>,
    delivered: usize,
    starter: Option<JoinHandle<()>>,
    workers: Arc<Mutex<Vec<JoinHandle<()>>>>,
    shut_down: bool,
}

impl std::fmt::Debug for Loader {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Loader")
            .field("config", &self.config)
            .field("epoch", &self.plan.epoch)
            .field("state", &self.state())
            .finish()
    }
}

impl Loader {
    /// Validates the config and returns without starting any worker.
    pub fn new(config: LoaderConfig, dataset: Dataset, plan: EpochPlan) -> Result<Self, LoaderError> {
        config.validate()?;
        let shared = Shared {
            gauges: (0..config.num_workers).map(|_| FetchGauge::default()).collect(),
            ..Shared::default()
        };
        Ok(Self {
            constructed_at: dataset.clock().now(),
            config,
            dataset,
            plan: Arc::new(plan),
            log: None,
            shared: Arc::new(shared),
            started_at: None,
            rx: None,
            reorder: BTreeMap::new(),
            delivered: 0,
            starter: None,
            workers: Arc::new(Mutex::new(Vec::new())),
            shut_down: false,
        })
    }

    pub fn with_event_log(mut self, log: Arc<EventLog>) -> Self {
        self.log = Some(log);
        self
    }

    pub fn config(&self) -> &LoaderConfig {
        &self.config
    }

    pub fn plan(&self) -> &EpochPlan {
        &self.plan
    }

    pub fn len(&self) -> usize {
        self.plan.len()
    }

    pub fn is_empty(&self) -> bool {
        self.plan.is_empty()
    }

    fn start(&mut self) {
        let clock = self.dataset.clock().clone();
        self.started_at = Some(clock.now());
        let (tx, rx) = mpsc::unbounded_channel();
        self.rx = Some(rx);

        let workers = self.config.num_workers;
        let mut assignments: Vec<Vec<BatchPlan>> = vec![Vec::new(); workers];
        for (pos, plan) in self.plan.plans.iter().enumerate() {
            assignments[pos % workers].push(plan.clone());
        }
        let ctx = WorkerContext {
            dataset: self.dataset.clone(),
            strategy: self.config.strategy,
            prefetch_factor: self.config.prefetch_factor,
            shared: self.shared.clone(),
            log: self.log.clone(),
            epoch: self.plan.epoch,
            tx,
        };
        let delay = Duration::from_secs_f64(self.config.worker_startup_delay_s);
        let mode = self.config.startup;
        let handles = self.workers.clone();
        self.starter = Some(tokio::spawn(async move {
            let mut pending = Vec::new();
            for (worker, plans) in assignments.into_iter().enumerate() {
                let t0 = clock.now();
                if !delay.is_zero() {
                    clock.sleep(delay).await;
                }
                if let Some(log) = &ctx.log {
                    log.record(
                        EventRecord::new(EventKind::WorkerStart, t0, clock.now())
                            .epoch(ctx.epoch)
                            .worker(worker),
                    );
                }
                match mode {
                    StartupMode::Lazy => {
                        let handle = tokio::spawn(ctx.clone().run(worker, plans));
                        handles.lock().expect("worker list poisoned").push(handle);
                    }
                    StartupMode::Blocking => pending.push((worker, plans)),
                }
            }
            for (worker, plans) in pending {
                let handle = tokio::spawn(ctx.clone().run(worker, plans));
                handles.lock().expect("worker list poisoned").push(handle);
            }
        }));
    }

    /// Next batch of the epoch, or `Ok(None)` once every plan was delivered.
    ///
    /// A failed batch is reported as [`LoaderError::BatchFailed`] and counts
    /// as delivered; the loader stays usable.
    pub async fn next_batch(&mut self) -> Result<Option<Batch>, LoaderError> {
        if self.shut_down {
            return Err(LoaderError::Shutdown);
        }
        if self.delivered == self.plan.len() {
            return Ok(None);
        }
        if self.started_at.is_none() {
            self.start();
        }
        loop {
            let ready = if self.config.in_order {
                let expected = self.plan.plans[self.delivered].batch_id;
                self.reorder.remove(&expected)
            } else {
                self.reorder.pop_first().map(|(_, r)| r)
            };
            if let Some(ready) = ready {
                return self.hand_out(ready);
            }
            let rx = self.rx.as_mut().expect("started");
            match rx.recv().await {
                Some(ready) => {
                    self.reorder.insert(ready.batch_id, ready);
                }
                None => return Err(LoaderError::WorkersExited),
            }
        }
    }

    fn hand_out(&mut self, ready: Ready) -> Result<Option<Batch>, LoaderError> {
        self.delivered += 1;
        self.shared.resident.fetch_sub(1, Ordering::SeqCst);
        let Ready { result, _permit: permit, .. } = ready;
        // the worker may refill only after the resident count dropped
        drop(permit);
        match result {
            Ok(batch) => Ok(Some(batch)),
            Err(e) => Err(LoaderError::BatchFailed { batch_id: e.batch_id, cause: e.cause }),
        }
    }

    /// Stops every worker and waits for them to exit. Idempotent.
    pub async fn shutdown(&mut self) -> LoaderState {
        if !self.shut_down {
            self.shut_down = true;
            if let Some(starter) = self.starter.take() {
                starter.abort();
                let _ = starter.await;
            }
            let handles = std::mem::take(&mut *self.workers.lock().expect("worker list poisoned"));
            for handle in &handles {
                handle.abort();
            }
            for handle in handles {
                let _ = handle.await;
            }
            self.rx = None;
            self.reorder.clear();
            self.shared.resident.store(0, Ordering::SeqCst);
        }
        self.state()
    }

    pub fn state(&self) -> LoaderState {
        let dispatched = self.shared.dispatched.load(Ordering::SeqCst);
        let phase = if self.shut_down {
            Phase::Shutdown
        } else if self.started_at.is_none() {
            Phase::Constructed
        } else if dispatched as usize == self.plan.len() {
            Phase::Draining
        } else {
            Phase::Running
        };
        LoaderState {
            phase,
            dispatched_batches: dispatched,
            delivered_batches: self.delivered as u64,
            resident_ready: self.shared.resident.load(Ordering::SeqCst),
            resident_high_water: self.shared.resident_high_water.load(Ordering::SeqCst),
            in_flight_high_water: self.shared.gauges.iter().map(FetchGauge::high_water).max().unwrap_or(0),
            constructed_at: self.constructed_at,
            started_at: self.started_at,
            first_fetch_at: *self.shared.first_fetch_at.lock().expect("loader state poisoned"),
        }
    }
}

impl Drop for Loader {
    fn drop(&mut self) {
        if let Some(starter) = &self.starter {
            starter.abort();
        }
        if let Ok(handles) = self.workers.lock() {
            for handle in handles.iter() {
                handle.abort();
            }
        }
    }
}
