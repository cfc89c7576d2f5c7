//! Experiment configuration and its TOML file format.
//!
//! A config file holds the experiment keys at top level plus optional
//! `[sweep]` and `[pool_bench]` tables:
//!
//! ```toml
//! batch_size = 64
//! epochs = 2
//!
//! [store]
//! kind = "latency_sim"
//! latency_model = { distribution = "fixed", latency_s = 0.1, seed = 0 }
//!
//! [loader]
//! num_workers = 4
//! prefetch_factor = 4
//! strategy = { kind = "intra_batch", num_fetch_workers = 16 }
//!
//! [sweep]
//! workers = [1, 2, 4]
//! fetchers = [1, 16]
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Duration;

use loadkit_core::dataset::{generate_manifest, read_manifest, RetryPolicy, SizeDistribution, DEFAULT_ITEM_SIZE};
use loadkit_core::storage::{CacheConfig, LatencyModel, StoreKind};
use loadkit_core::{DatasetSpec, LoaderConfig, StoreSpec, TransformModel};
use serde::{Deserialize, Serialize};

use crate::error::HarnessError;

/// Table 4 defaults of the reference setup.
pub const DEFAULT_BATCH_SIZE: usize = 256;
pub const DEFAULT_EPOCHS: u32 = 5;
pub const DEFAULT_N_ITEMS: usize = 15_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub n_items: usize,
    pub sizes: SizeDistribution,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self { n_items: DEFAULT_N_ITEMS, sizes: SizeDistribution::Fixed { bytes: DEFAULT_ITEM_SIZE }, seed: 0 }
    }
}

/// Items come from a manifest file when one is given, else from the
/// synthetic generator.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSource {
    pub manifest: Option<PathBuf>,
    pub synthetic: SyntheticSpec,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConsumerConfig {
    pub to_device_delay_s: f64,
    pub train_delay_s: f64,
}

impl Default for ConsumerConfig {
    fn default() -> Self {
        Self { to_device_delay_s: 0.005, train_delay_s: 0.040 }
    }
}

impl ConsumerConfig {
    pub fn to_device(&self) -> Duration {
        Duration::from_secs_f64(self.to_device_delay_s)
    }

    pub fn train(&self) -> Duration {
        Duration::from_secs_f64(self.train_delay_s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClockMode {
    /// Virtual for the latency simulator, wall time otherwise.
    #[default]
    Auto,
    Real,
    Virtual,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub run_id: Option<String>,
    pub dataset: DatasetSource,
    pub store: StoreSpec,
    pub cache: Option<CacheConfig>,
    pub loader: LoaderConfig,
    pub batch_size: usize,
    pub dataset_limit: Option<usize>,
    pub epochs: u32,
    pub seed: u64,
    pub shuffle: bool,
    pub drop_last: bool,
    pub transform: TransformModel,
    pub retry: RetryPolicy,
    pub consumer: ConsumerConfig,
    pub output_dir: Option<PathBuf>,
    pub clock: ClockMode,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            run_id: None,
            dataset: DatasetSource::default(),
            store: StoreSpec::latency_sim(LatencyModel::fixed(Duration::from_millis(100))),
            cache: None,
            loader: LoaderConfig::default(),
            batch_size: DEFAULT_BATCH_SIZE,
            dataset_limit: None,
            epochs: DEFAULT_EPOCHS,
            seed: 0,
            shuffle: true,
            drop_last: false,
            transform: TransformModel::None,
            retry: RetryPolicy::default(),
            consumer: ConsumerConfig::default(),
            output_dir: None,
            clock: ClockMode::Auto,
        }
    }
}

fn config_error(message: impl Into<String>) -> HarnessError {
    HarnessError::Config(message.into())
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.batch_size == 0 {
            return Err(config_error("batch_size must be at least 1"));
        }
        if self.epochs == 0 {
            return Err(config_error("epochs must be at least 1"));
        }
        if self.dataset.manifest.is_none() && self.dataset.synthetic.n_items == 0 {
            return Err(config_error("dataset.synthetic.n_items must be at least 1"));
        }
        self.loader.validate()?;
        self.store.validate().map_err(|e| config_error(e.to_string()))?;
        for (name, v) in [
            ("consumer.to_device_delay_s", self.consumer.to_device_delay_s),
            ("consumer.train_delay_s", self.consumer.train_delay_s),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(config_error(format!("{name} must be >= 0, got {v}")));
            }
        }
        if self.clock == ClockMode::Virtual && self.store.kind != StoreKind::LatencySim {
            return Err(config_error("the virtual clock requires a latency_sim store"));
        }
        Ok(())
    }

    pub fn uses_virtual_clock(&self) -> bool {
        match self.clock {
            ClockMode::Auto => self.store.kind == StoreKind::LatencySim,
            ClockMode::Real => false,
            ClockMode::Virtual => true,
        }
    }

    pub fn run_id(&self) -> String {
        self.run_id.clone().unwrap_or_else(|| {
            let s = &self.loader.strategy;
            format!(
                "{}-w{}-f{}-p{}-s{}",
                serde_json::to_value(s.kind).ok().and_then(|v| v.as_str().map(str::to_owned)).unwrap_or_default(),
                self.loader.num_workers,
                s.num_fetch_workers,
                s.batch_pool,
                self.seed
            )
        })
    }

    pub fn dataset_spec(&self) -> Result<DatasetSpec, HarnessError> {
        let items = match &self.dataset.manifest {
            Some(path) => read_manifest(path)?,
            None => {
                let s = &self.dataset.synthetic;
                generate_manifest(s.n_items, s.sizes, s.seed)
            }
        };
        Ok(DatasetSpec { items, ..DatasetSpec::default() }
            .with_limit(self.dataset_limit)
            .with_transform(self.transform))
    }

    /// Settings that must agree for two runs to be compared directly. The
    /// loader and strategy are left out since those are what comparisons vary.
    pub fn fingerprint(&self, spec: &DatasetSpec) -> BTreeMap<String, String> {
        let json = |v: serde_json::Result<String>| v.unwrap_or_default();
        BTreeMap::from([
            ("n_items".into(), spec.len().to_string()),
            ("dataset_bytes".into(), spec.total_bytes().to_string()),
            ("batch_size".into(), self.batch_size.to_string()),
            ("epochs".into(), self.epochs.to_string()),
            ("seed".into(), self.seed.to_string()),
            ("shuffle".into(), self.shuffle.to_string()),
            ("drop_last".into(), self.drop_last.to_string()),
            ("store".into(), json(serde_json::to_string(&self.store))),
            ("transform".into(), json(serde_json::to_string(&self.transform))),
            ("consumer".into(), json(serde_json::to_string(&self.consumer))),
        ])
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepAxes {
    pub workers: Vec<usize>,
    pub fetchers: Vec<usize>,
    pub pool: Vec<usize>,
    pub repeats: Option<usize>,
}

/// Table 8 pool sizes.
pub const TABLE_POOL_SIZES: [usize; 15] = [1, 2, 3, 4, 5, 6, 7, 10, 15, 20, 30, 40, 50, 60, 80];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PoolBenchParams {
    pub pool_sizes: Vec<usize>,
    pub groups: usize,
    pub draws_per_group: usize,
}

impl Default for PoolBenchParams {
    fn default() -> Self {
        Self { pool_sizes: TABLE_POOL_SIZES.to_vec(), groups: 40, draws_per_group: 2000 }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ConfigFile {
    pub experiment: ExperimentConfig,
    pub sweep: Option<SweepAxes>,
    pub pool_bench: Option<PoolBenchParams>,
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self, HarnessError> {
        let mut table: toml::Table = text.parse().map_err(|e: toml::de::Error| config_error(e.to_string()))?;
        let sweep = table.remove("sweep").map(|v| v.try_into()).transpose();
        let pool_bench = table.remove("pool_bench").map(|v| v.try_into()).transpose();
        let bad = |e: toml::de::Error| config_error(e.to_string());
        Ok(Self {
            experiment: toml::Value::Table(table).try_into().map_err(bad)?,
            sweep: sweep.map_err(bad)?,
            pool_bench: pool_bench.map_err(bad)?,
        })
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| config_error(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }
}

#[cfg(test)]
mod tests {
    use loadkit_core::storage::Distribution;
    use loadkit_core::StrategyKind;

    use super::*;

    #[test]
    fn defaults_follow_the_reference_setup() {
        let c = ExperimentConfig::default();
        assert_eq!(c.batch_size, 256);
        assert_eq!(c.epochs, 5);
        assert_eq!(c.loader.num_workers, 4);
        assert_eq!(c.loader.prefetch_factor, 4);
        assert_eq!(c.loader.strategy.num_fetch_workers, 16);
        assert_eq!(c.loader.strategy.batch_pool, 0);
        assert_eq!(c.consumer, ConsumerConfig { to_device_delay_s: 0.005, train_delay_s: 0.04 });
        let spec = c.dataset_spec().unwrap();
        assert_eq!(spec.len(), 15_000);
        assert_eq!(spec.items[0].size_bytes, 115 * 1024);
        c.validate().unwrap();
        assert!(c.uses_virtual_clock());
    }

    #[test]
    fn parses_file_with_sections() {
        let file = ConfigFile::parse(
            r#"
            batch_size = 64
            epochs = 2
            dataset_limit = 640
            [dataset.synthetic]
            n_items = 1000
            sizes = { kind = "fixed", bytes = 2048 }
            [store]
            kind = "latency_sim"
            latency_model = { distribution = "uniform", min_s = 0.01, max_s = 0.2, seed = 3, bandwidth_bytes_per_s = 1e6 }
            [loader]
            num_workers = 2
            prefetch_factor = 3
            strategy = { kind = "pooled_disassembly", num_fetch_workers = 8, batch_pool = 128 }
            [consumer]
            train_delay_s = 0.1
            [sweep]
            workers = [1, 2]
            fetchers = [4, 8, 16]
            repeats = 3
            [pool_bench]
            pool_sizes = [1, 2]
            "#,
        )
        .unwrap();
        let c = &file.experiment;
        assert_eq!(c.batch_size, 64);
        assert_eq!(c.dataset_spec().unwrap().len(), 640);
        assert_eq!(c.loader.strategy.kind, StrategyKind::PooledDisassembly);
        assert_eq!(c.consumer.to_device_delay_s, 0.005);
        let model = c.store.latency_model.as_ref().unwrap();
        assert_eq!(model.distribution, Distribution::Uniform { min_s: 0.01, max_s: 0.2 });
        assert_eq!(model.bandwidth_bytes_per_s, Some(1e6));
        assert_eq!(file.sweep.unwrap().fetchers, vec![4, 8, 16]);
        assert_eq!(file.pool_bench.unwrap().groups, 40);
        c.validate().unwrap();
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        assert!(matches!(ConfigFile::parse("batch_sise = 3"), Err(HarnessError::Config(_))));
        for c in [
            ExperimentConfig { batch_size: 0, ..Default::default() },
            ExperimentConfig { epochs: 0, ..Default::default() },
            ExperimentConfig { loader: LoaderConfig { num_workers: 0, ..Default::default() }, ..Default::default() },
            ExperimentConfig { store: StoreSpec::local_dir("/tmp"), clock: ClockMode::Virtual, ..Default::default() },
            ExperimentConfig {
                consumer: ConsumerConfig { train_delay_s: -1.0, ..Default::default() },
                ..Default::default()
            },
        ] {
            let err = c.validate().unwrap_err();
            assert_eq!(err.exit_code(), 2, "{err}");
        }
    }
}
