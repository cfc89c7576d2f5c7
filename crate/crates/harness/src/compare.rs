//! Side-by-side comparison of run summaries against a baseline.
//!
//! `speedup` is baseline runtime over run runtime; `throughput_ratio` and
//! `get_batch_ratio` are run over baseline and baseline over run
//! respectively, so values above 1 always favour the run.

use std::fmt::Write as _;
use std::io::Write;

use loadkit_core::metrics::{EventKind, MetricsSummary};
use serde::Serialize;

use crate::error::HarnessError;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompareRow {
    pub run_id: String,
    pub runtime_s: f64,
    pub throughput_img_s: f64,
    pub throughput_mbit_s: f64,
    pub idle_fraction_pct: f64,
    pub median_get_item_s: Option<f64>,
    pub median_get_batch_s: Option<f64>,
    pub median_train_step_s: Option<f64>,
    pub speedup: f64,
    pub throughput_ratio: f64,
    pub get_batch_ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub baseline: String,
    pub rows: Vec<CompareRow>,
    /// Runs whose config fingerprint differs from the baseline.
    pub warnings: Vec<String>,
}

/// `baseline` names a run id; the first summary is used when it is `None`.
pub fn compare_report(summaries: &[MetricsSummary], baseline: Option<&str>) -> Result<Comparison, HarnessError> {
    if summaries.len() < 2 {
        return Err(HarnessError::Config(format!(
            "comparison needs at least two summaries, got {}",
            summaries.len()
        )));
    }
    let base = match baseline {
        Some(id) => summaries
            .iter()
            .find(|s| s.run_id == id)
            .ok_or_else(|| HarnessError::Config(format!("baseline {id:?} is not among the summaries")))?,
        None => &summaries[0],
    };
    let mut warnings = Vec::new();
    for s in summaries {
        if s.fingerprint != base.fingerprint {
            let differing: Vec<&str> = base
                .fingerprint
                .keys()
                .chain(s.fingerprint.keys())
                .filter(|k| base.fingerprint.get(*k) != s.fingerprint.get(*k))
                .map(String::as_str)
                .collect::<std::collections::BTreeSet<_>>()
                .into_iter()
                .collect();
            warnings.push(format!(
                "MismatchedConfigs: {} differs from baseline {} in {}",
                s.run_id,
                base.run_id,
                differing.join(", ")
            ));
        }
    }
    let base_batch = base.median(EventKind::GetBatch);
    let rows = summaries
        .iter()
        .map(|s| {
            let batch = s.median(EventKind::GetBatch);
            CompareRow {
                run_id: s.run_id.clone(),
                runtime_s: s.runtime_s,
                throughput_img_s: s.throughput_img_s,
                throughput_mbit_s: s.throughput_mbit_s,
                idle_fraction_pct: s.idle_fraction_pct,
                median_get_item_s: s.median(EventKind::GetItem),
                median_get_batch_s: batch,
                median_train_step_s: s.median(EventKind::TrainStep),
                speedup: base.runtime_s / s.runtime_s,
                throughput_ratio: s.throughput_img_s / base.throughput_img_s,
                get_batch_ratio: base_batch.zip(batch).map(|(b, r)| b / r),
            }
        })
        .collect();
    Ok(Comparison { baseline: base.run_id.clone(), rows, warnings })
}

impl Comparison {
    pub fn to_text(&self) -> String {
        let opt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |v| format!("{v:.4}"));
        let width = self.rows.iter().map(|r| r.run_id.len()).max().unwrap_or(6).max(6);
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<width$}  {:>10}  {:>10}  {:>10}  {:>7}  {:>10}  {:>10}  {:>8}  {:>8}  {:>8}",
            "run", "runtime_s", "img/s", "Mbit/s", "idle%", "item_s", "batch_s", "speedup", "thr_x", "batch_x"
        );
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:<width$}  {:>10.3}  {:>10.2}  {:>10.2}  {:>7.2}  {:>10}  {:>10}  {:>8.2}  {:>8.2}  {:>8}",
                r.run_id,
                r.runtime_s,
                r.throughput_img_s,
                r.throughput_mbit_s,
                r.idle_fraction_pct,
                opt(r.median_get_item_s),
                opt(r.median_get_batch_s),
                r.speedup,
                r.throughput_ratio,
                r.get_batch_ratio.map_or_else(|| "-".to_string(), |v| format!("{v:.2}")),
            );
        }
        let _ = writeln!(out, "baseline: {}", self.baseline);
        out
    }

    pub fn write_csv(&self, out: impl Write) -> Result<(), HarnessError> {
        let mut writer = csv::Writer::from_writer(out);
        for row in &self.rows {
            writer.serialize(row)?;
        }
        writer.flush().map_err(HarnessError::io("<csv>"))?;
        Ok(())
    }
}
