//! Command-line front end. Flags mirror the config keys in kebab-case and
//! override values read from `--config`.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use loadkit_core::dataset::{generate_manifest, write_manifest, SizeDistribution, DEFAULT_ITEM_SIZE};
use loadkit_core::metrics::MetricsSummary;
use loadkit_core::storage::{synthetic_payload, CacheConfig, Distribution, LatencyModel, StoreKind};
use loadkit_core::StrategyKind;
use serde::de::DeserializeOwned;

use crate::compare::compare_report;
use crate::config::{ClockMode, ConfigFile, ExperimentConfig, PoolBenchParams};
use crate::error::HarnessError;
use crate::experiment::run_experiment_full;
use crate::pool_bench::{run_dataset_pool_bench, write_pool_bench_csv};
use crate::sweep::{run_sweep, write_sweep_csv, SweepSpec};

#[derive(Debug, Parser)]
#[command(name = "loadkit", version, about = "Concurrent data loading experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one experiment and write its events and summary.
    Run(ExperimentArgs),
    /// Run a workers x fetchers x pool grid and write a CSV.
    Sweep(SweepArgs),
    /// Benchmark random fetches through bounded task pools.
    PoolBench(PoolBenchArgs),
    /// Compare summary files against a baseline.
    Compare(CompareArgs),
    /// Write a synthetic manifest, optionally with payload files.
    GenManifest(GenManifestArgs),
}

fn parse_snake<T: DeserializeOwned>(s: &str) -> Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.replace('-', "_"))).map_err(|e| e.to_string())
}

#[derive(Debug, Default, Args)]
pub struct ExperimentArgs {
    /// TOML config file; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub run_id: Option<String>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub n_items: Option<usize>,
    #[arg(long)]
    pub item_size: Option<u64>,
    #[arg(long)]
    pub dataset_seed: Option<u64>,
    /// local_dir, http_object or latency_sim.
    #[arg(long, value_parser = parse_snake::<StoreKind>)]
    pub store: Option<StoreKind>,
    #[arg(long)]
    pub root_or_endpoint: Option<String>,
    /// Environment variable holding a bearer token.
    #[arg(long)]
    pub auth: Option<String>,
    /// Fixed simulated latency in seconds.
    #[arg(long, conflicts_with_all = ["latency_min", "latency_max"])]
    pub latency: Option<f64>,
    #[arg(long, requires = "latency_max")]
    pub latency_min: Option<f64>,
    #[arg(long, requires = "latency_min")]
    pub latency_max: Option<f64>,
    #[arg(long)]
    pub latency_seed: Option<u64>,
    /// Shared link bandwidth of the simulator in bytes per second.
    #[arg(long)]
    pub bandwidth: Option<f64>,
    #[arg(long)]
    pub cache_capacity: Option<u64>,
    #[arg(long)]
    pub num_workers: Option<usize>,
    #[arg(long)]
    pub prefetch_factor: Option<usize>,
    /// sequential, intra_batch or pooled_disassembly.
    #[arg(long, value_parser = |s: &str| s.parse::<StrategyKind>())]
    pub strategy: Option<StrategyKind>,
    #[arg(long)]
    pub num_fetch_workers: Option<usize>,
    #[arg(long)]
    pub batch_pool: Option<usize>,
    #[arg(long)]
    pub worker_startup_delay: Option<f64>,
    #[arg(long)]
    pub out_of_order: bool,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub dataset_limit: Option<usize>,
    #[arg(long)]
    pub epochs: Option<u32>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub no_shuffle: bool,
    #[arg(long)]
    pub drop_last: bool,
    #[arg(long)]
    pub to_device_delay: Option<f64>,
    #[arg(long)]
    pub train_delay: Option<f64>,
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
    /// auto, real or virtual.
    #[arg(long, value_parser = parse_snake::<ClockMode>)]
    pub clock: Option<ClockMode>,
}

impl ExperimentArgs {
    pub fn load(&self) -> Result<ConfigFile, HarnessError> {
        let mut file = match &self.config {
            Some(path) => ConfigFile::load(path)?,
            None => ConfigFile::default(),
        };
        self.apply(&mut file.experiment);
        Ok(file)
    }

    pub fn apply(&self, cfg: &mut ExperimentConfig) {
        macro_rules! set {
            ($field:expr, $value:expr) => {
                if let Some(v) = $value.clone() {
                    $field = v;
                }
            };
        }
        if self.run_id.is_some() {
            cfg.run_id = self.run_id.clone();
        }
        if self.manifest.is_some() {
            cfg.dataset.manifest = self.manifest.clone();
        }
        set!(cfg.dataset.synthetic.n_items, self.n_items);
        if let Some(bytes) = self.item_size {
            cfg.dataset.synthetic.sizes = SizeDistribution::Fixed { bytes };
        }
        set!(cfg.dataset.synthetic.seed, self.dataset_seed);

        if let Some(kind) = self.store {
            cfg.store.kind = kind;
            match kind {
                StoreKind::LatencySim if cfg.store.latency_model.is_none() => {
                    cfg.store.latency_model = Some(LatencyModel::fixed(Duration::from_millis(100)));
                }
                StoreKind::LatencySim => {}
                _ => cfg.store.latency_model = None,
            }
        }
        set!(cfg.store.root_or_endpoint, self.root_or_endpoint);
        if self.auth.is_some() {
            cfg.store.auth = self.auth.clone();
        }
        let distribution = match (self.latency, self.latency_min, self.latency_max) {
            (Some(latency_s), _, _) => Some(Distribution::Fixed { latency_s }),
            (None, Some(min_s), Some(max_s)) => Some(Distribution::Uniform { min_s, max_s }),
            _ => None,
        };
        if distribution.is_some() || self.latency_seed.is_some() || self.bandwidth.is_some() {
            let model = cfg
                .store
                .latency_model
                .get_or_insert_with(|| LatencyModel::fixed(Duration::from_millis(100)));
            set!(model.distribution, distribution);
            set!(model.seed, self.latency_seed);
            if self.bandwidth.is_some() {
                model.bandwidth_bytes_per_s = self.bandwidth;
            }
        }
        if let Some(capacity_bytes) = self.cache_capacity {
            cfg.cache = Some(CacheConfig { capacity_bytes });
        }

        set!(cfg.loader.num_workers, self.num_workers);
        set!(cfg.loader.prefetch_factor, self.prefetch_factor);
        set!(cfg.loader.strategy.kind, self.strategy);
        set!(cfg.loader.strategy.num_fetch_workers, self.num_fetch_workers);
        set!(cfg.loader.strategy.batch_pool, self.batch_pool);
        set!(cfg.loader.worker_startup_delay_s, self.worker_startup_delay);
        if self.out_of_order {
            cfg.loader.in_order = false;
        }

        set!(cfg.batch_size, self.batch_size);
        if self.dataset_limit.is_some() {
            cfg.dataset_limit = self.dataset_limit;
        }
        set!(cfg.epochs, self.epochs);
        set!(cfg.seed, self.seed);
        if self.no_shuffle {
            cfg.shuffle = false;
        }
        if self.drop_last {
            cfg.drop_last = true;
        }
        set!(cfg.consumer.to_device_delay_s, self.to_device_delay);
        set!(cfg.consumer.train_delay_s, self.train_delay);
        if self.output_dir.is_some() {
            cfg.output_dir = self.output_dir.clone();
        }
        set!(cfg.clock, self.clock);
    }
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub experiment: ExperimentArgs,
    #[arg(long, value_delimiter = ',')]
    pub workers: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    pub fetchers: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    pub pool: Option<Vec<usize>>,
    #[arg(long)]
    pub repeats: Option<usize>,
    #[arg(long, default_value = "sweep.csv")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PoolBenchArgs {
    #[command(flatten)]
    pub experiment: ExperimentArgs,
    #[arg(long, value_delimiter = ',')]
    pub pool_sizes: Option<Vec<usize>>,
    #[arg(long)]
    pub groups: Option<usize>,
    #[arg(long)]
    pub draws_per_group: Option<usize>,
    #[arg(long, default_value = "pool_bench.csv")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    /// `{run_id}.summary.json` files.
    #[arg(required = true)]
    pub summaries: Vec<PathBuf>,
    /// Run id of the baseline; defaults to the first summary.
    #[arg(long)]
    pub baseline: Option<String>,
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GenManifestArgs {
    #[arg(long, default_value_t = 15_000)]
    pub n_items: usize,
    /// Fixed item size in bytes.
    #[arg(long, conflicts_with = "median_bytes")]
    pub item_size: Option<u64>,
    /// Median of lognormal item sizes.
    #[arg(long, requires = "sigma")]
    pub median_bytes: Option<u64>,
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// Also write every payload under this directory for a local_dir store.
    #[arg(long)]
    pub materialize: Option<PathBuf>,
}

fn create(path: &Path) -> Result<BufWriter<File>, HarnessError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(HarnessError::io(parent))?;
    }
    File::create(path).map(BufWriter::new).map_err(HarnessError::io(path))
}

pub fn execute(command: Command) -> Result<(), HarnessError> {
    match command {
        Command::Run(args) => {
            let file = args.load()?;
            let out = run_experiment_full(&file.experiment)?;
            println!("{}", serde_json::to_string_pretty(&out.summary).expect("summary serializes"));
            for path in out.events_path.iter().chain(&out.summary_path) {
                eprintln!("wrote {}", path.display());
            }
        }
        Command::Sweep(args) => {
            let file = args.experiment.load()?;
            let mut axes = file.sweep.unwrap_or_default();
            if let Some(v) = args.workers {
                axes.workers = v;
            }
            if let Some(v) = args.fetchers {
                axes.fetchers = v;
            }
            if let Some(v) = args.pool {
                axes.pool = v;
            }
            if args.repeats.is_some() {
                axes.repeats = args.repeats;
            }
            let spec = SweepSpec::new(axes, file.experiment);
            let rows = run_sweep(&spec)?;
            write_sweep_csv(&rows, create(&args.out)?)?;
            let failed = rows.iter().filter(|r| r.status != "ok").count();
            eprintln!("wrote {} rows to {} ({failed} failed)", rows.len(), args.out.display());
        }
        Command::PoolBench(args) => {
            let file = args.experiment.load()?;
            let mut params: PoolBenchParams = file.pool_bench.unwrap_or_default();
            if let Some(v) = args.pool_sizes {
                params.pool_sizes = v;
            }
            if let Some(v) = args.groups {
                params.groups = v;
            }
            if let Some(v) = args.draws_per_group {
                params.draws_per_group = v;
            }
            let rows = run_dataset_pool_bench(&params, &file.experiment)?;
            write_pool_bench_csv(&rows, create(&args.out)?)?;
            eprintln!("wrote {} rows to {}", rows.len(), args.out.display());
        }
        Command::Compare(args) => {
            let summaries = args
                .summaries
                .iter()
                .map(|path| {
                    let file = File::open(path).map_err(HarnessError::io(path))?;
                    serde_json::from_reader::<_, MetricsSummary>(BufReader::new(file))
                        .map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))
                })
                .collect::<Result<Vec<_>, _>>()?;
            let cmp = compare_report(&summaries, args.baseline.as_deref())?;
            for warning in &cmp.warnings {
                eprintln!("warning: {warning}");
            }
            print!("{}", cmp.to_text());
            if let Some(path) = &args.csv {
                cmp.write_csv(create(path)?)?;
            }
        }
        Command::GenManifest(args) => {
            let sizes = match (args.item_size, args.median_bytes, args.sigma) {
                (Some(bytes), _, _) => SizeDistribution::Fixed { bytes },
                (None, Some(median_bytes), Some(sigma)) => SizeDistribution::Lognormal { median_bytes, sigma },
                _ => SizeDistribution::Fixed { bytes: DEFAULT_ITEM_SIZE },
            };
            let items = generate_manifest(args.n_items, sizes, args.seed);
            if let Some(parent) = args.out.parent().filter(|p| !p.as_os_str().is_empty()) {
                std::fs::create_dir_all(parent).map_err(HarnessError::io(parent))?;
            }
            write_manifest(&args.out, &items)?;
            if let Some(root) = &args.materialize {
                for item in &items {
                    let path = root.join(&item.key);
                    if let Some(parent) = path.parent() {
                        std::fs::create_dir_all(parent).map_err(HarnessError::io(parent))?;
                    }
                    std::fs::write(&path, synthetic_payload(&item.key, item.size_bytes))
                        .map_err(HarnessError::io(&path))?;
                }
            }
            eprintln!("wrote {} items to {}", items.len(), args.out.display());
        }
    }
    Ok(())
}
