use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::stats::{idle_fraction, median, throughput_images, throughput_mbits};
use super::{EventKind, EventRecord, MetricsError, SCHEMA_VERSION};
use crate::storage::CacheStats;

/// Facts about a run that the event log alone does not carry.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunFacts {
    pub run_id: String,
    /// Dataset length per epoch.
    pub n_items: u64,
    pub epochs: u64,
    pub t_i: f64,
    pub t_f: f64,
    pub failed_batches: u64,
    pub cache: Option<CacheStats>,
    /// Config values that must agree for two runs to be comparable.
    pub fingerprint: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsSummary {
    pub v: u32,
    pub run_id: String,
    pub t_i: f64,
    pub t_f: f64,
    pub runtime_s: f64,
    pub n_items: u64,
    pub epochs: u64,
    pub items_loaded: u64,
    pub batches_loaded: u64,
    pub failed_batches: u64,
    pub bytes_loaded: u64,
    pub throughput_img_s: f64,
    pub throughput_mbit_s: f64,
    /// Share of the run with no consumer work (`to_device` / `train_step`).
    pub idle_fraction_pct: f64,
    /// `100 - idle_fraction_pct`; only an analog of hardware utilization.
    pub busy_util_pct: f64,
    /// Median span per event kind, in seconds.
    pub medians: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub median_transform_s: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cache: Option<CacheStats>,
    #[serde(default)]
    pub fingerprint: BTreeMap<String, String>,
}

pub const CONSUMER_KINDS: [EventKind; 2] = [EventKind::TrainStep, EventKind::ToDevice];

pub fn summarize(records: &[EventRecord], facts: &RunFacts) -> Result<MetricsSummary, MetricsError> {
    let runtime_s = facts.t_f - facts.t_i;
    let items: Vec<&EventRecord> = records.iter().filter(|r| r.kind == EventKind::GetItem).collect();
    let bytes_loaded: u64 = items.iter().filter_map(|r| r.bytes).sum();
    let batches_loaded = records.iter().filter(|r| r.kind == EventKind::GetBatch).count() as u64;

    let idle_fraction_pct = if records.is_empty() {
        100.0
    } else {
        idle_fraction(records, &CONSUMER_KINDS, Some((facts.t_i, facts.t_f)))?
    };

    let mut medians = BTreeMap::new();
    for kind in [EventKind::GetItem, EventKind::GetBatch, EventKind::ToDevice, EventKind::TrainStep] {
        let mut spans: Vec<f64> = records.iter().filter(|r| r.kind == kind).map(|r| r.duration()).collect();
        if let Some(m) = median(&mut spans) {
            medians.insert(kind.as_str().to_string(), m);
        }
    }
    let mut transforms: Vec<f64> = items.iter().filter_map(|r| r.transform_s).collect();

    Ok(MetricsSummary {
        v: SCHEMA_VERSION,
        run_id: facts.run_id.clone(),
        t_i: facts.t_i,
        t_f: facts.t_f,
        runtime_s,
        n_items: facts.n_items,
        epochs: facts.epochs,
        items_loaded: items.len() as u64,
        batches_loaded,
        failed_batches: facts.failed_batches,
        bytes_loaded,
        throughput_img_s: throughput_images(facts.n_items, facts.epochs, facts.t_i, facts.t_f)?,
        throughput_mbit_s: throughput_mbits(bytes_loaded, facts.t_i, facts.t_f)?,
        idle_fraction_pct,
        busy_util_pct: 100.0 - idle_fraction_pct,
        medians,
        median_transform_s: median(&mut transforms),
        cache: facts.cache,
        fingerprint: facts.fingerprint.clone(),
    })
}

impl MetricsSummary {
    pub fn median(&self, kind: EventKind) -> Option<f64> {
        self.medians.get(kind.as_str()).copied()
    }
}
