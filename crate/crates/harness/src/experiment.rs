//! One end-to-end run: loader epochs feeding a simulated trainer.

use std::fs::File;
use std::io::BufWriter;
use std::path::PathBuf;
use std::sync::Arc;

use loadkit_core::clock::runtime_for;
use loadkit_core::metrics::{summarize, EventKind, EventLog, EventRecord, MetricsSummary, RunFacts};
use loadkit_core::storage::ByteLruCache;
use loadkit_core::{
    make_epoch_plan, open_store, Dataset, DatasetSpec, Loader, LoaderError, MonotonicClock, SharedClock,
    VirtualClock,
};

use crate::config::ExperimentConfig;
use crate::error::HarnessError;

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub summary: MetricsSummary,
    pub events: Vec<EventRecord>,
    pub events_path: Option<PathBuf>,
    pub summary_path: Option<PathBuf>,
}

/// Runs `cfg` on a runtime matching its clock and returns the summary.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<MetricsSummary, HarnessError> {
    run_experiment_full(cfg).map(|out| out.summary)
}

pub fn run_experiment_full(cfg: &ExperimentConfig) -> Result<RunOutput, HarnessError> {
    cfg.validate()?;
    let virtual_time = cfg.uses_virtual_clock();
    let runtime = runtime_for(virtual_time).map_err(HarnessError::io("<runtime>"))?;
    runtime.block_on(async {
        let clock: SharedClock = if virtual_time { VirtualClock::shared() } else { MonotonicClock::shared() };
        run_on(cfg, clock).await
    })
}

/// Runs `cfg` on the current runtime with the given clock.
pub async fn run_on(cfg: &ExperimentConfig, clock: SharedClock) -> Result<RunOutput, HarnessError> {
    cfg.validate()?;
    let spec = cfg.dataset_spec()?;
    let fingerprint = cfg.fingerprint(&spec);
    let dataset = open_dataset(cfg, spec, clock.clone()).await?;
    let log = Arc::new(EventLog::new());
    let run_id = cfg.run_id();

    let t_i = clock.now();
    let mut failed_batches = 0;
    for epoch in 0..cfg.epochs {
        let plan = make_epoch_plan(dataset.len(), cfg.batch_size, cfg.shuffle, cfg.drop_last, cfg.seed, epoch);
        let mut loader = Loader::new(cfg.loader.clone(), dataset.clone(), plan)?.with_event_log(log.clone());
        loop {
            match loader.next_batch().await {
                Ok(Some(batch)) => {
                    let t0 = clock.now();
                    clock.sleep(cfg.consumer.to_device()).await;
                    let t1 = clock.now();
                    clock.sleep(cfg.consumer.train()).await;
                    let t2 = clock.now();
                    log.record(EventRecord::new(EventKind::ToDevice, t0, t1).epoch(epoch).batch(batch.batch_id));
                    log.record(EventRecord::new(EventKind::TrainStep, t1, t2).epoch(epoch).batch(batch.batch_id));
                }
                Ok(None) => break,
                Err(LoaderError::BatchFailed { batch_id, cause }) => {
                    log::warn!("{run_id}: epoch {epoch} batch {batch_id} failed: {cause}");
                    failed_batches += 1;
                }
                Err(e) => {
                    loader.shutdown().await;
                    return Err(e.into());
                }
            }
        }
        loader.shutdown().await;
    }
    let t_f = clock.now();

    let events = log.snapshot();
    let facts = RunFacts {
        run_id: run_id.clone(),
        n_items: dataset.len() as u64,
        epochs: cfg.epochs as u64,
        t_i,
        t_f,
        failed_batches,
        cache: dataset.cache().map(|c| c.stats()),
        fingerprint,
    };
    let summary = summarize(&events, &facts)?;
    let (events_path, summary_path) = match &cfg.output_dir {
        Some(dir) => {
            std::fs::create_dir_all(dir).map_err(HarnessError::io(dir))?;
            let events_path = dir.join(format!("{run_id}.events.jsonl"));
            let file = File::create(&events_path).map_err(HarnessError::io(&events_path))?;
            loadkit_core::metrics::write_jsonl(&events, BufWriter::new(file))?;
            let summary_path = dir.join(format!("{run_id}.summary.json"));
            let file = File::create(&summary_path).map_err(HarnessError::io(&summary_path))?;
            serde_json::to_writer_pretty(BufWriter::new(file), &summary)
                .map_err(|e| HarnessError::io(&summary_path)(e.into()))?;
            (Some(events_path), Some(summary_path))
        }
        None => (None, None),
    };
    log::info!(
        "{run_id}: {:.3} s, {:.2} img/s, {:.2} Mbit/s, idle {:.1}%",
        summary.runtime_s,
        summary.throughput_img_s,
        summary.throughput_mbit_s,
        summary.idle_fraction_pct
    );
    Ok(RunOutput { summary, events, events_path, summary_path })
}

pub(crate) async fn open_dataset(
    cfg: &ExperimentConfig,
    spec: DatasetSpec,
    clock: SharedClock,
) -> Result<Dataset, HarnessError> {
    let store = open_store(&cfg.store, &spec.items, clock.clone()).await?;
    let mut dataset = Dataset::new(spec, store, clock).with_retry(cfg.retry);
    if let Some(cache) = cfg.cache {
        dataset = dataset.with_cache(Arc::new(ByteLruCache::new(cache)));
    }
    Ok(dataset)
}
