//! Grid sweeps over workers, fetchers and batch pool.
//!
//! CSV columns, one row per cell:
//!
//! `workers, fetchers, batch_pool, repeats, status, throughput_mbit_s_mean,
//! throughput_mbit_s_std, throughput_img_s_mean, throughput_img_s_std,
//! median_get_item_s_mean, median_get_item_s_std, median_get_batch_s_mean,
//! median_get_batch_s_std, runtime_s_mean, error`
//!
//! Standard deviations are sample deviations (n − 1), 0 for one repeat.
//! Cells whose runs fail are kept as `status = error` rows.

use std::io::Write;

use loadkit_core::metrics::{EventKind, MetricsSummary};
use serde::Serialize;

use crate::config::{ExperimentConfig, SweepAxes};
use crate::error::HarnessError;
use crate::experiment::run_experiment;

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub workers: Vec<usize>,
    pub fetchers: Vec<usize>,
    pub pool: Vec<usize>,
    pub repeats: usize,
    pub base: ExperimentConfig,
}

impl SweepSpec {
    pub fn new(axes: SweepAxes, base: ExperimentConfig) -> Self {
        Self {
            workers: axes.workers,
            fetchers: axes.fetchers,
            pool: axes.pool,
            repeats: axes.repeats.unwrap_or(1),
            base,
        }
    }

    /// Cells in row-major order; an empty axis keeps the base value.
    pub fn cells(&self) -> Vec<Cell> {
        let axis = |values: &[usize], default: usize| if values.is_empty() { vec![default] } else { values.to_vec() };
        let strategy = &self.base.loader.strategy;
        let mut cells = Vec::new();
        for &workers in &axis(&self.workers, self.base.loader.num_workers) {
            for &fetchers in &axis(&self.fetchers, strategy.num_fetch_workers) {
                for &batch_pool in &axis(&self.pool, strategy.batch_pool) {
                    cells.push(Cell { workers, fetchers, batch_pool });
                }
            }
        }
        cells
    }

    pub fn grid_size(&self) -> usize {
        self.cells().len() * self.repeats
    }

    /// Config of one repeat of one cell. Repeat `r` shifts the sampler seed
    /// and the latency model seed by `r`.
    pub fn cell_config(&self, cell: Cell, repeat: usize) -> ExperimentConfig {
        let mut cfg = self.base.clone();
        cfg.loader.num_workers = cell.workers;
        cfg.loader.strategy.num_fetch_workers = cell.fetchers;
        cfg.loader.strategy.batch_pool = cell.batch_pool;
        cfg.seed = self.base.seed.wrapping_add(repeat as u64);
        // simulated latencies do not depend on the sampler seed
        if let Some(model) = cfg.store.latency_model.as_mut() {
            model.seed = model.seed.wrapping_add(repeat as u64);
        }
        let prefix = self.base.run_id.clone().unwrap_or_else(|| "sweep".into());
        cfg.run_id = Some(format!("{prefix}-w{}-f{}-p{}-r{repeat}", cell.workers, cell.fetchers, cell.batch_pool));
        cfg
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Cell {
    pub workers: usize,
    pub fetchers: usize,
    pub batch_pool: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub workers: usize,
    pub fetchers: usize,
    pub batch_pool: usize,
    pub repeats: usize,
    pub status: &'static str,
    pub throughput_mbit_s_mean: Option<f64>,
    pub throughput_mbit_s_std: Option<f64>,
    pub throughput_img_s_mean: Option<f64>,
    pub throughput_img_s_std: Option<f64>,
    pub median_get_item_s_mean: Option<f64>,
    pub median_get_item_s_std: Option<f64>,
    pub median_get_batch_s_mean: Option<f64>,
    pub median_get_batch_s_std: Option<f64>,
    pub runtime_s_mean: Option<f64>,
    pub error: Option<String>,
}

fn mean_std(values: &[f64]) -> (Option<f64>, Option<f64>) {
    if values.is_empty() {
        return (None, None);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = if values.len() < 2 {
        0.0
    } else {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    };
    (Some(mean), Some(std))
}

fn aggregate(cell: Cell, repeats: usize, runs: &[MetricsSummary]) -> SweepRow {
    let col = |f: &dyn Fn(&MetricsSummary) -> Option<f64>| mean_std(&runs.iter().filter_map(f).collect::<Vec<_>>());
    let (mbit_mean, mbit_std) = col(&|s| Some(s.throughput_mbit_s));
    let (img_mean, img_std) = col(&|s| Some(s.throughput_img_s));
    let (item_mean, item_std) = col(&|s| s.median(EventKind::GetItem));
    let (batch_mean, batch_std) = col(&|s| s.median(EventKind::GetBatch));
    SweepRow {
        workers: cell.workers,
        fetchers: cell.fetchers,
        batch_pool: cell.batch_pool,
        repeats,
        status: "ok",
        throughput_mbit_s_mean: mbit_mean,
        throughput_mbit_s_std: mbit_std,
        throughput_img_s_mean: img_mean,
        throughput_img_s_std: img_std,
        median_get_item_s_mean: item_mean,
        median_get_item_s_std: item_std,
        median_get_batch_s_mean: batch_mean,
        median_get_batch_s_std: batch_std,
        runtime_s_mean: col(&|s| Some(s.runtime_s)).0,
        error: None,
    }
}

/// Runs every cell `repeats` times, one run at a time.
pub fn run_sweep(spec: &SweepSpec) -> Result<Vec<SweepRow>, HarnessError> {
    if spec.repeats == 0 {
        return Err(HarnessError::Config("sweep repeats must be at least 1".into()));
    }
    spec.base.validate()?;
    let mut rows = Vec::new();
    for cell in spec.cells() {
        let mut runs = Vec::with_capacity(spec.repeats);
        let mut failure = None;
        for repeat in 0..spec.repeats {
            match run_experiment(&spec.cell_config(cell, repeat)) {
                Ok(summary) => runs.push(summary),
                Err(e) => {
                    log::warn!("sweep cell {cell:?} repeat {repeat} failed: {e}");
                    failure = Some(e.to_string());
                    break;
                }
            }
        }
        rows.push(match failure {
            None => aggregate(cell, spec.repeats, &runs),
            Some(error) => SweepRow {
                status: "error",
                error: Some(error),
                ..aggregate(cell, spec.repeats, &[])
            },
        });
    }
    Ok(rows)
}

pub fn write_sweep_csv(rows: &[SweepRow], out: impl Write) -> Result<(), HarnessError> {
    let mut writer = csv::Writer::from_writer(out);
    for row in rows {
        writer.serialize(row)?;
    }
    writer.flush().map_err(HarnessError::io("<csv>"))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use std::time::Duration;

    use loadkit_core::dataset::SizeDistribution;
    use loadkit_core::storage::LatencyModel;
    use loadkit_core::StoreSpec;

    use super::*;
    use crate::config::{ConsumerConfig, DatasetSource, SyntheticSpec};

    fn tiny() -> ExperimentConfig {
        ExperimentConfig {
            dataset: DatasetSource {
                manifest: None,
                synthetic: SyntheticSpec { n_items: 32, sizes: SizeDistribution::Fixed { bytes: 64 }, seed: 0 },
            },
            store: StoreSpec::latency_sim(LatencyModel::uniform(Duration::from_millis(1), Duration::from_millis(30), 2)),
            batch_size: 8,
            epochs: 1,
            consumer: ConsumerConfig { to_device_delay_s: 0.001, train_delay_s: 0.002 },
            ..Default::default()
        }
    }

    #[test]
    fn reference_axes_give_48_rows() {
        let spec = SweepSpec {
            workers: vec![1, 2, 4, 8, 16, 32, 64, 128],
            fetchers: vec![1, 2, 4, 8, 16, 32],
            pool: vec![],
            repeats: 1,
            base: tiny(),
        };
        assert_eq!(spec.grid_size(), 48);
        let rows = run_sweep(&spec).unwrap();
        assert_eq!(rows.len(), 48);
        assert!(rows.iter().all(|r| r.status == "ok"));
        let mut csv = Vec::new();
        write_sweep_csv(&rows, &mut csv).unwrap();
        let text = String::from_utf8(csv).unwrap();
        assert_eq!(text.lines().count(), 49);
        assert!(text.starts_with("workers,fetchers,batch_pool,repeats,status,throughput_mbit_s_mean,"));
    }

    #[test]
    fn repeats_fill_the_stddev_columns() {
        let spec = SweepSpec { workers: vec![2], fetchers: vec![4], pool: vec![], repeats: 10, base: tiny() };
        assert_eq!(spec.grid_size(), 10);
        let rows = run_sweep(&spec).unwrap();
        assert_eq!(rows.len(), 1);
        let std = rows[0].throughput_mbit_s_std.unwrap();
        assert!(std > 0.0, "{std}");
        assert!(rows[0].median_get_batch_s_std.is_some());
    }

    #[test]
    fn single_cell_equals_run_experiment() {
        let base = tiny();
        let spec = SweepSpec { workers: vec![], fetchers: vec![], pool: vec![], repeats: 1, base: base.clone() };
        let row = &run_sweep(&spec).unwrap()[0];
        let direct = run_experiment(&base).unwrap();
        assert_eq!(row.throughput_mbit_s_mean, Some(direct.throughput_mbit_s));
        assert_eq!(row.throughput_img_s_mean, Some(direct.throughput_img_s));
        assert_eq!(row.median_get_item_s_mean, direct.median(EventKind::GetItem));
        assert_eq!(row.median_get_batch_s_mean, direct.median(EventKind::GetBatch));
        assert_eq!(row.throughput_mbit_s_std, Some(0.0));
    }

    #[test]
    fn failing_cells_become_error_rows() {
        let spec = SweepSpec { workers: vec![0, 1], fetchers: vec![2], pool: vec![], repeats: 1, base: tiny() };
        let rows = run_sweep(&spec).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].status, "error");
        assert!(rows[0].error.as_deref().unwrap().contains("num_workers"));
        assert_eq!(rows[1].status, "ok");
    }

    #[test]
    fn sample_stddev() {
        let (m, s) = mean_std(&[2.0, 4.0, 4.0, 4.0, 5.0, 5.0, 7.0, 9.0]);
        assert_eq!(m, Some(5.0));
        assert!((s.unwrap() - (32.0f64 / 7.0).sqrt()).abs() < 1e-12);
    }
}
