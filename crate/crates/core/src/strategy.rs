//! Batch fetch strategies.
//!
//! * `Sequential` loads the items of a plan one after another.
//! * `IntraBatch` loads the items of one plan with up to `num_fetch_workers`
//!   requests in flight and restores plan order afterwards.
//! * `PooledDisassembly` splits several consecutive plans into one shared
//!   pool of item fetches and reassembles each plan as its items complete.

use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};

use futures::StreamExt;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{Dataset, ItemError, Sample};
use crate::sampler::BatchPlan;
use crate::Span;

pub const DEFAULT_FETCH_WORKERS: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyKind {
    Sequential,
    IntraBatch,
    PooledDisassembly,
}

impl std::str::FromStr for StrategyKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.replace('-', "_").as_str() {
            "sequential" | "vanilla" => Ok(StrategyKind::Sequential),
            "intra_batch" | "asyncio" => Ok(StrategyKind::IntraBatch),
            "pooled_disassembly" | "threaded" => Ok(StrategyKind::PooledDisassembly),
            other => Err(format!("unknown strategy {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StrategyConfig {
    pub kind: StrategyKind,
    #[serde(default = "default_fetch_workers")]
    pub num_fetch_workers: usize,
    /// Items taken across consecutive plans; 0 disables disassembly.
    #[serde(default)]
    pub batch_pool: usize,
}

fn default_fetch_workers() -> usize {
    DEFAULT_FETCH_WORKERS
}

impl Default for StrategyConfig {
    fn default() -> Self {
        Self::intra_batch(DEFAULT_FETCH_WORKERS)
    }
}

impl StrategyConfig {
    pub fn sequential() -> Self {
        Self { kind: StrategyKind::Sequential, num_fetch_workers: 1, batch_pool: 0 }
    }

    pub fn intra_batch(num_fetch_workers: usize) -> Self {
        Self { kind: StrategyKind::IntraBatch, num_fetch_workers, batch_pool: 0 }
    }

    pub fn pooled(num_fetch_workers: usize, batch_pool: usize) -> Self {
        Self { kind: StrategyKind::PooledDisassembly, num_fetch_workers, batch_pool }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.kind != StrategyKind::Sequential && self.num_fetch_workers == 0 {
            return Err("num_fetch_workers must be at least 1".into());
        }
        Ok(())
    }

    /// Maximum item fetches in flight within one worker.
    pub fn item_concurrency(&self) -> usize {
        match self.kind {
            StrategyKind::Sequential => 1,
            _ => self.num_fetch_workers,
        }
    }

    /// Plans a worker disassembles together.
    pub fn plans_per_pool(&self, batch_size: usize) -> usize {
        match self.kind {
            StrategyKind::PooledDisassembly => plans_per_pool(self.batch_pool, batch_size),
            _ => 1,
        }
    }
}

/// `ceil(batch_pool / batch_size)`, at least 1.
pub fn plans_per_pool(batch_pool: usize, batch_size: usize) -> usize {
    if batch_pool == 0 || batch_size == 0 {
        1
    } else {
        batch_pool.div_ceil(batch_size).max(1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Batch {
    pub batch_id: u64,
    /// In plan order.
    pub samples: Vec<Sample>,
    pub assembled_at: f64,
    pub load_span: Span,
}

impl Batch {
    pub fn indices(&self) -> Vec<usize> {
        self.samples.iter().map(|s| s.item.index).collect()
    }

    pub fn bytes(&self) -> u64 {
        self.samples.iter().map(|s| s.item.size_bytes).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("batch {batch_id} failed: {cause}")]
pub struct BatchError {
    pub batch_id: u64,
    pub cause: ItemError,
}

/// Tracks item fetches in flight and the highest count observed.
#[derive(Debug, Default)]
pub struct FetchGauge {
    current: AtomicUsize,
    high_water: AtomicUsize,
}

pub struct GaugeGuard<'a>(&'a FetchGauge);

impl Drop for GaugeGuard<'_> {
    fn drop(&mut self) {
        self.0.current.fetch_sub(1, Ordering::SeqCst);
    }
}

impl FetchGauge {
    pub fn enter(&self) -> GaugeGuard<'_> {
        let now = self.current.fetch_add(1, Ordering::SeqCst) + 1;
        self.high_water.fetch_max(now, Ordering::SeqCst);
        GaugeGuard(self)
    }

    pub fn in_flight(&self) -> usize {
        self.current.load(Ordering::SeqCst)
    }

    pub fn high_water(&self) -> usize {
        self.high_water.load(Ordering::SeqCst)
    }
}

fn assemble(batch_id: u64, samples: Vec<Sample>, span: Span, assembled_at: f64) -> Batch {
    Batch { batch_id, samples, assembled_at, load_span: span }
}

fn samples_span(samples: &[Sample], fallback: f64) -> Span {
    let start = samples.iter().map(|s| s.fetch_span.start).fold(f64::INFINITY, f64::min);
    let end = samples.iter().map(|s| s.fetch_span.end).fold(f64::NEG_INFINITY, f64::max);
    if samples.is_empty() {
        Span::at(fallback)
    } else {
        Span::new(start, end)
    }
}

pub async fn fetch_batch_sequential(
    dataset: &Dataset,
    plan: &BatchPlan,
    gauge: &FetchGauge,
) -> Result<Batch, BatchError> {
    let mut samples = Vec::with_capacity(plan.indices.len());
    for &index in &plan.indices {
        let _guard = gauge.enter();
        let sample = dataset
            .get_item(index)
            .await
            .map_err(|cause| BatchError { batch_id: plan.batch_id, cause })?;
        samples.push(sample);
    }
    let now = dataset.clock().now();
    let span = samples_span(&samples, now);
    Ok(assemble(plan.batch_id, samples, span, now))
}

/// Loads one plan with at most `num_fetch_workers` requests in flight. The
/// first failure drops every outstanding request.
pub async fn fetch_batch_concurrent(
    dataset: &Dataset,
    plan: &BatchPlan,
    num_fetch_workers: usize,
    gauge: &FetchGauge,
) -> Result<Batch, BatchError> {
    let dispatched = dataset.clock().now();
    let mut slots: Vec<Option<Sample>> = vec![None; plan.indices.len()];
    let mut fetches = futures::stream::iter(plan.indices.iter().copied().enumerate())
        .map(|(slot, index)| async move {
            let _guard = gauge.enter();
            (slot, dataset.get_item(index).await)
        })
        .buffer_unordered(num_fetch_workers.max(1));
    while let Some((slot, result)) = fetches.next().await {
        let sample = result.map_err(|cause| BatchError { batch_id: plan.batch_id, cause })?;
        slots[slot] = Some(sample);
    }
    let samples: Vec<Sample> = slots.into_iter().map(|s| s.expect("every slot filled")).collect();
    let now = dataset.clock().now();
    let end = samples.iter().map(|s| s.fetch_span.end).fold(dispatched, f64::max);
    Ok(assemble(plan.batch_id, samples, Span::new(dispatched, end), now))
}

/// Drives `plans` in groups of `ceil(batch_pool / batch_size)` plans, each
/// group sharing one pool of `num_fetch_workers` fetches. Batches go to
/// `emit` in ascending `batch_id`; a failed batch is emitted as an error
/// and the rest of its group still completes.
pub async fn run_pooled_disassembly<F>(
    dataset: &Dataset,
    plans: &[BatchPlan],
    num_fetch_workers: usize,
    batch_pool: usize,
    gauge: &FetchGauge,
    mut emit: F,
) where
    F: FnMut(Result<Batch, BatchError>),
{
    if batch_pool == 0 {
        for plan in plans {
            emit(fetch_batch_concurrent(dataset, plan, num_fetch_workers, gauge).await);
        }
        return;
    }
    let batch_size = plans.first().map_or(1, |p| p.indices.len());
    for group in plans.chunks(plans_per_pool(batch_pool, batch_size)) {
        fetch_pooled_group(dataset, group, num_fetch_workers, gauge, &mut emit).await;
    }
}

/// Loads every item of `group` through one shared pool.
pub async fn fetch_pooled_group<F>(
    dataset: &Dataset,
    group: &[BatchPlan],
    num_fetch_workers: usize,
    gauge: &FetchGauge,
    emit: &mut F,
) where
    F: FnMut(Result<Batch, BatchError>),
{
    let failed: Vec<AtomicBool> = group.iter().map(|_| AtomicBool::new(false)).collect();
    let mut slots: Vec<Vec<Option<Sample>>> =
        group.iter().map(|p| vec![None; p.indices.len()]).collect();
    let mut remaining: Vec<usize> = group.iter().map(|p| p.indices.len()).collect();
    let mut done: Vec<Option<Result<Batch, BatchError>>> = group.iter().map(|_| None).collect();
    let now = dataset.clock().now();
    for (pos, plan) in group.iter().enumerate() {
        if plan.indices.is_empty() {
            done[pos] = Some(Ok(assemble(plan.batch_id, Vec::new(), Span::at(now), now)));
        }
    }

    let mut work = Vec::with_capacity(remaining.iter().sum());
    for (pos, plan) in group.iter().enumerate() {
        work.extend(plan.indices.iter().enumerate().map(|(slot, &index)| (pos, slot, index)));
    }
    let failed_ref = &failed;
    let mut fetches = futures::stream::iter(work)
        .map(|(pos, slot, index)| async move {
            if failed_ref[pos].load(Ordering::SeqCst) {
                return (pos, slot, None);
            }
            let _guard = gauge.enter();
            (pos, slot, Some(dataset.get_item(index).await))
        })
        .buffer_unordered(num_fetch_workers.max(1));

    let mut next_emit = 0;
    loop {
        while next_emit < group.len() {
            match done[next_emit].take() {
                Some(result) => {
                    emit(result);
                    next_emit += 1;
                }
                None => break,
            }
        }
        let Some((pos, slot, result)) = fetches.next().await else {
            break;
        };
        if failed[pos].load(Ordering::SeqCst) {
            continue;
        }
        match result {
            None => {}
            Some(Ok(sample)) => {
                slots[pos][slot] = Some(sample);
                remaining[pos] -= 1;
                if remaining[pos] == 0 {
                    let samples: Vec<Sample> = std::mem::take(&mut slots[pos])
                        .into_iter()
                        .map(|s| s.expect("every slot filled"))
                        .collect();
                    let now = dataset.clock().now();
                    let span = samples_span(&samples, now);
                    done[pos] = Some(Ok(assemble(group[pos].batch_id, samples, span, now)));
                }
            }
            Some(Err(cause)) => {
                failed[pos].store(true, Ordering::SeqCst);
                done[pos] = Some(Err(BatchError { batch_id: group[pos].batch_id, cause }));
            }
        }
    }
    debug_assert_eq!(next_emit, group.len());
}
