//! Dataset-level pool benchmark: random item fetches through a bounded
//! task pool, bypassing the loader.
//!
//! CSV columns, one row per pool size:
//!
//! `pool_size, groups, draws_per_group, throughput_mbit_s,
//! median_request_s, mean_request_s, total_bytes, elapsed_s`
//!
//! Throughput is total bytes over the summed group wall time.

use std::io::Write;

use futures::StreamExt;
use loadkit_core::clock::runtime_for;
use loadkit_core::metrics::{median, throughput_mbits};
use loadkit_core::{Dataset, MonotonicClock, SharedClock, VirtualClock};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::{ExperimentConfig, PoolBenchParams};
use crate::error::HarnessError;
use crate::experiment::open_dataset;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PoolBenchRow {
    pub pool_size: usize,
    pub groups: usize,
    pub draws_per_group: usize,
    pub throughput_mbit_s: f64,
    pub median_request_s: f64,
    pub mean_request_s: f64,
    pub total_bytes: u64,
    pub elapsed_s: f64,
}

pub fn run_dataset_pool_bench(
    params: &PoolBenchParams,
    base: &ExperimentConfig,
) -> Result<Vec<PoolBenchRow>, HarnessError> {
    if params.pool_sizes.is_empty() || params.pool_sizes.contains(&0) {
        return Err(HarnessError::Config("pool sizes must be a nonempty list of counts >= 1".into()));
    }
    if params.groups == 0 || params.draws_per_group == 0 {
        return Err(HarnessError::Config("groups and draws_per_group must be at least 1".into()));
    }
    base.validate()?;
    let virtual_time = base.uses_virtual_clock();
    let runtime = runtime_for(virtual_time).map_err(HarnessError::io("<runtime>"))?;
    runtime.block_on(async {
        let mut rows = Vec::with_capacity(params.pool_sizes.len());
        for &pool_size in &params.pool_sizes {
            let clock: SharedClock = if virtual_time { VirtualClock::shared() } else { MonotonicClock::shared() };
            // a fresh store per pool size keeps link state from leaking across rows
            let dataset = open_dataset(base, base.dataset_spec()?, clock).await?;
            rows.push(bench_pool(&dataset, pool_size, params, base.seed).await?);
        }
        Ok(rows)
    })
}

async fn bench_pool(
    dataset: &Dataset,
    pool_size: usize,
    params: &PoolBenchParams,
    seed: u64,
) -> Result<PoolBenchRow, HarnessError> {
    let clock = dataset.clock().clone();
    let mut request_times = Vec::with_capacity(params.groups * params.draws_per_group);
    let mut total_bytes = 0u64;
    let mut elapsed = 0.0;
    for group in 0..params.groups {
        let t0 = clock.now();
        let mut fetches = futures::stream::iter(0..params.draws_per_group)
            .map(|draw| async move {
                // one rng stream per draw: every pool size draws the same items
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream((group * params.draws_per_group + draw) as u64);
                dataset.get_random_item(&mut rng).await
            })
            .buffer_unordered(pool_size);
        while let Some(result) = fetches.next().await {
            let sample = result?;
            request_times.push(sample.fetch_span.duration());
            total_bytes += sample.item.size_bytes;
        }
        elapsed += clock.now() - t0;
    }
    let mean_request_s = request_times.iter().sum::<f64>() / request_times.len() as f64;
    Ok(PoolBenchRow {
        pool_size,
        groups: params.groups,
        draws_per_group: params.draws_per_group,
        throughput_mbit_s: throughput_mbits(total_bytes, 0.0, elapsed)?,
        median_request_s: median(&mut request_times).expect("at least one draw"),
        mean_request_s,
        total_bytes,
        elapsed_s: elapsed,
    })
}

pub fn write_pool_bench_csv(rows: &[PoolBenchRow], out: impl Write) -> Result<(), HarnessError> {
    let mut writer = csv::Writer::from_writer(out);
    for row in rows {
        writer.serialize(row)?;
    }
    writer.flush().map_err(HarnessError::io("<csv>"))?;
    Ok(())
}
