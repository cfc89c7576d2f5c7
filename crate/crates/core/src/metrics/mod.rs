//! Event log and the statistics derived from it.
//!
//! Every pipeline layer records timestamped spans into an [`EventLog`]. The
//! log serializes to JSON Lines, one record per line, each tagged with the
//! schema version `"v"`.

mod stats;
mod summary;

use std::io::{BufRead, Write};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::Sample;
use crate::strategy::Batch;

pub use stats::{
    fade_analysis, idle_fraction, median, median_span, throughput_images, throughput_mbits,
    FadeAnalysis, DEFAULT_FADE_BINS,
};
pub use summary::{summarize, MetricsSummary, RunFacts};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("measurement window must have positive duration, got [{t_i}, {t_f}]")]
    NonPositiveDuration { t_i: f64, t_f: f64 },
    #[error("event log is empty")]
    EmptyLog,
    #[error("no events of kind {0}")]
    NoSuchKind(EventKind),
    #[error("event log io: {0}")]
    Io(#[from] std::io::Error),
    #[error("event log line {line}: {source}")]
    Parse { line: usize, source: serde_json::Error },
    #[error("unsupported schema version {0}")]
    Version(u32),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    GetItem,
    GetBatch,
    ToDevice,
    TrainStep,
    CacheHit,
    CacheMiss,
    WorkerStart,
}

impl EventKind {
    pub const ALL: [EventKind; 7] = [
        EventKind::GetItem,
        EventKind::GetBatch,
        EventKind::ToDevice,
        EventKind::TrainStep,
        EventKind::CacheHit,
        EventKind::CacheMiss,
        EventKind::WorkerStart,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            EventKind::GetItem => "get_item",
            EventKind::GetBatch => "get_batch",
            EventKind::ToDevice => "to_device",
            EventKind::TrainStep => "train_step",
            EventKind::CacheHit => "cache_hit",
            EventKind::CacheMiss => "cache_miss",
            EventKind::WorkerStart => "worker_start",
        }
    }
}

impl std::fmt::Display for EventKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub kind: EventKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epoch: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub batch_id: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub item_index: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub worker: Option<usize>,
    pub t_start: f64,
    pub t_end: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bytes: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub digest: Option<u64>,
    /// Transform share of a `get_item` span.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transform_s: Option<f64>,
}

impl EventRecord {
    pub fn new(kind: EventKind, t_start: f64, t_end: f64) -> Self {
        Self {
            kind,
            epoch: None,
            batch_id: None,
            item_index: None,
            worker: None,
            t_start,
            t_end,
            bytes: None,
            digest: None,
            transform_s: None,
        }
    }

    pub fn duration(&self) -> f64 {
        self.t_end - self.t_start
    }

    pub fn epoch(mut self, epoch: u32) -> Self {
        self.epoch = Some(epoch);
        self
    }

    pub fn batch(mut self, batch_id: u64) -> Self {
        self.batch_id = Some(batch_id);
        self
    }

    pub fn worker(mut self, worker: usize) -> Self {
        self.worker = Some(worker);
        self
    }

    pub fn bytes(mut self, bytes: u64) -> Self {
        self.bytes = Some(bytes);
        self
    }

    pub fn item(sample: &Sample, epoch: u32, batch_id: u64) -> Self {
        Self {
            item_index: Some(sample.item.index),
            bytes: Some(sample.item.size_bytes),
            digest: Some(sample.payload_digest),
            transform_s: Some(sample.transform_s),
            ..Self::new(EventKind::GetItem, sample.fetch_span.start, sample.fetch_span.end)
                .epoch(epoch)
                .batch(batch_id)
        }
    }
}

#[derive(Serialize)]
struct LineOut<'a> {
    v: u32,
    #[serde(flatten)]
    record: &'a EventRecord,
}

#[derive(Deserialize)]
struct LineIn {
    v: u32,
    #[serde(flatten)]
    record: EventRecord,
}

/// Concurrent append-only log. Snapshots are ordered by
/// `(t_start, insertion sequence)`.
#[derive(Debug, Default)]
pub struct EventLog {
    records: Mutex<Vec<EventRecord>>,
}

impl EventLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&self, record: EventRecord) {
        debug_assert!(record.t_end >= record.t_start, "{record:?}");
        self.records.lock().expect("event log poisoned").push(record);
    }

    /// Records the `get_item` (plus cache outcome when `with_cache`) events
    /// of every sample in `batch`, followed by its `get_batch` event.
    pub fn record_batch(&self, batch: &Batch, epoch: u32, worker: Option<usize>, with_cache: bool) {
        let mut records = self.records.lock().expect("event log poisoned");
        for sample in &batch.samples {
            let mut item = EventRecord::item(sample, epoch, batch.batch_id);
            item.worker = worker;
            if with_cache {
                let kind = if sample.cache_hit { EventKind::CacheHit } else { EventKind::CacheMiss };
                let mut outcome = EventRecord { kind, digest: None, transform_s: None, ..item.clone() };
                outcome.bytes = None;
                records.push(item);
                records.push(outcome);
            } else {
                records.push(item);
            }
        }
        let mut get_batch = EventRecord::new(EventKind::GetBatch, batch.load_span.start, batch.load_span.end)
            .epoch(epoch)
            .batch(batch.batch_id)
            .bytes(batch.bytes());
        get_batch.worker = worker;
        records.push(get_batch);
    }

    pub fn len(&self) -> usize {
        self.records.lock().expect("event log poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn snapshot(&self) -> Vec<EventRecord> {
        let mut records = self.records.lock().expect("event log poisoned").clone();
        // stable sort keeps insertion order among equal starts
        records.sort_by(|a, b| a.t_start.total_cmp(&b.t_start));
        records
    }

    pub fn write_jsonl(&self, out: impl Write) -> Result<(), MetricsError> {
        write_jsonl(&self.snapshot(), out)
    }
}

pub fn write_jsonl(records: &[EventRecord], mut out: impl Write) -> Result<(), MetricsError> {
    for record in records {
        serde_json::to_writer(&mut out, &LineOut { v: SCHEMA_VERSION, record })
            .map_err(std::io::Error::from)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_jsonl(input: impl BufRead) -> Result<Vec<EventRecord>, MetricsError> {
    let mut records = Vec::new();
    for (n, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: LineIn =
            serde_json::from_str(&line).map_err(|source| MetricsError::Parse { line: n + 1, source })?;
        if parsed.v != SCHEMA_VERSION {
            return Err(MetricsError::Version(parsed.v));
        }
        records.push(parsed.record);
    }
    Ok(records)
}

/// Records of `kind`, optionally restricted to one epoch.
pub fn of_kind(records: &[EventRecord], kind: EventKind, epoch: Option<u32>) -> Vec<&EventRecord> {
    records
        .iter()
        .filter(|r| r.kind == kind && (epoch.is_none() || r.epoch == epoch))
        .collect()
}
