//! Acceptance suite. Every test prints one `PASS`/`FAIL` line naming the
//! criterion and the measured values, then asserts.

use std::sync::Arc;
use std::time::{Duration, Instant};

use futures::StreamExt;
use loadkit_core::dataset::{generate_manifest, SizeDistribution};
use loadkit_core::loader::StartupMode;
use loadkit_core::metrics::{
    fade_analysis, idle_fraction, median_span, of_kind, throughput_images, throughput_mbits, EventKind,
    EventRecord, DEFAULT_FADE_BINS,
};
use loadkit_core::storage::{ByteLruCache, CacheConfig, LatencyModel, LatencySimStore};
use loadkit_core::{
    make_epoch_plan, Dataset, DatasetSpec, Loader, LoaderConfig, MonotonicClock, SharedClock, Store, StoreSpec,
    StrategyConfig, VirtualClock,
};
use loadkit_harness::config::{
    ClockMode, ConsumerConfig, DatasetSource, PoolBenchParams, SyntheticSpec, TABLE_POOL_SIZES,
};
use loadkit_harness::{compare_report, run_dataset_pool_bench, run_experiment, run_experiment_full, ExperimentConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn report(criterion: &str, ok: bool, detail: String) {
    println!("{} {criterion}: {detail}", if ok { "PASS" } else { "FAIL" });
    assert!(ok, "{criterion}: {detail}");
}

fn sim_dataset(n: usize, bytes: u64, model: LatencyModel, clock: SharedClock) -> Dataset {
    let spec = DatasetSpec::from_entries((0..n).map(|i| (format!("items/{i:06}.bin"), bytes)));
    let store = LatencySimStore::new(model, spec.items.iter().map(|i| (i.key.clone(), i.size_bytes)), clock.clone());
    Dataset::new(spec, Arc::new(store), clock)
}

fn experiment(n: usize, bytes: u64, model: LatencyModel) -> ExperimentConfig {
    ExperimentConfig {
        dataset: DatasetSource {
            manifest: None,
            synthetic: SyntheticSpec { n_items: n, sizes: SizeDistribution::Fixed { bytes }, seed: 0 },
        },
        store: StoreSpec::latency_sim(model),
        ..Default::default()
    }
}

#[test]
fn throughput_arithmetic() {
    let a = throughput_images(15_000, 5, 0.0, 137.24).unwrap();
    let b = throughput_images(15_000, 5, 0.0, 2309.99).unwrap();
    // 13 800 Mbit expressed in bytes with the 1024² convention
    let bytes = 13_800u64 * 1024 * 1024 / 8;
    let c = throughput_mbits(bytes, 0.0, 263.08).unwrap();
    let ok = (a - 546.48).abs() <= 0.01 && (b - 32.47).abs() <= 0.01 && (c - 52.46).abs() <= 0.05;
    report("throughput arithmetic", ok, format!("{a:.4} img/s, {b:.4} img/s, {c:.4} Mbit/s"));
}

#[tokio::test(start_paused = true)]
async fn exactly_once_delivery() {
    let started = Instant::now();
    let mut checked = 0;
    let mut failures = Vec::new();
    for seed in 0..10u64 {
        for n in [0usize, 1, 7, 64, 1000] {
            for bs in [1usize, 4, 64] {
                for strategy in [StrategyConfig::sequential(), StrategyConfig::intra_batch(8), StrategyConfig::pooled(8, 2 * bs)] {
                    let model = LatencyModel::uniform(Duration::from_millis(1), Duration::from_millis(20), seed);
                    let dataset = sim_dataset(n, 16, model, VirtualClock::shared());
                    for epoch in 0..2 {
                        let plan = make_epoch_plan(n, bs, true, false, seed, epoch);
                        let config = LoaderConfig { num_workers: 3, prefetch_factor: 2, strategy, ..Default::default() };
                        let mut loader = Loader::new(config, dataset.clone(), plan.clone()).unwrap();
                        let mut delivered = Vec::with_capacity(n);
                        let mut position = 0;
                        while let Some(batch) = loader.next_batch().await.unwrap() {
                            let expected = &plan.plans[position];
                            if batch.batch_id != expected.batch_id || batch.indices() != expected.indices {
                                failures.push(format!("seed {seed} n {n} bs {bs} {:?} batch {}", strategy.kind, batch.batch_id));
                            }
                            delivered.extend(batch.indices());
                            position += 1;
                        }
                        loader.shutdown().await;
                        delivered.sort_unstable();
                        if delivered != (0..n).collect::<Vec<_>>() {
                            failures.push(format!("seed {seed} n {n} bs {bs} {:?} epoch {epoch}: multiset", strategy.kind));
                        }
                        checked += 1;
                    }
                }
            }
        }
    }
    let elapsed = started.elapsed().as_secs_f64();
    report(
        "exactly-once delivery",
        failures.is_empty() && elapsed < 30.0,
        format!("{checked} epochs checked in {elapsed:.2} s, {} violations {:?}", failures.len(), failures.first()),
    );
}

#[tokio::test(start_paused = true)]
async fn backpressure_bound() {
    let started = Instant::now();
    let mut observed = Vec::new();
    for workers in [1usize, 4] {
        for prefetch in [1usize, 2, 4] {
            let clock = VirtualClock::shared();
            let dataset = sim_dataset(256, 64, LatencyModel::fixed(Duration::from_millis(10)), clock.clone());
            let config = LoaderConfig {
                num_workers: workers,
                prefetch_factor: prefetch,
                strategy: StrategyConfig::intra_batch(4),
                ..Default::default()
            };
            let mut loader = Loader::new(config, dataset, make_epoch_plan(256, 4, true, false, 1, 0)).unwrap();
            let mut peak = 0;
            while loader.next_batch().await.unwrap().is_some() {
                clock.sleep(Duration::from_secs(1)).await;
                peak = peak.max(loader.state().resident_ready);
            }
            let high_water = loader.shutdown().await.resident_high_water;
            observed.push((workers, prefetch, high_water, peak));
        }
    }
    let elapsed = started.elapsed().as_secs_f64();
    let ok = observed.iter().all(|&(w, p, hw, peak)| hw == w * p && peak <= w * p) && elapsed < 20.0;
    report("backpressure bound", ok, format!("(workers, prefetch, high-water, sampled peak) {observed:?}"));
}

fn speedup_config(strategy: StrategyConfig, clock: ClockMode) -> ExperimentConfig {
    let mut cfg = experiment(192, 1024, LatencyModel::fixed(Duration::from_millis(50)));
    cfg.run_id = Some(format!("{:?}", strategy.kind));
    cfg.loader = LoaderConfig { num_workers: 1, prefetch_factor: 1, strategy, ..Default::default() };
    cfg.batch_size = 64;
    cfg.epochs = 1;
    cfg.consumer = ConsumerConfig { to_device_delay_s: 0.0, train_delay_s: 0.0 };
    cfg.clock = clock;
    cfg
}

#[test]
fn within_batch_speedup() {
    let ratio = |clock: ClockMode| {
        let seq = run_experiment(&speedup_config(StrategyConfig::sequential(), clock)).unwrap();
        let intra = run_experiment(&speedup_config(StrategyConfig::intra_batch(16), clock)).unwrap();
        let r = seq.median(EventKind::GetBatch).unwrap() / intra.median(EventKind::GetBatch).unwrap();
        let cmp = compare_report(&[seq, intra], None).unwrap();
        (r, cmp.rows[1].get_batch_ratio.unwrap())
    };
    let started = Instant::now();
    let (virtual_ratio, virtual_cmp) = ratio(ClockMode::Virtual);
    let (real_ratio, _) = ratio(ClockMode::Real);
    let elapsed = started.elapsed().as_secs_f64();
    let ok = (virtual_ratio - 16.0).abs() < 1e-9 && virtual_cmp == virtual_ratio && real_ratio >= 8.0 && elapsed < 60.0;
    report(
        "within-batch speedup",
        ok,
        format!("virtual {virtual_ratio:.9}x, real {real_ratio:.2}x (ideal 16x), {elapsed:.1} s wall"),
    );
}

#[tokio::test(start_paused = true)]
async fn disassembly_parity() {
    let bs = 32;
    let model = LatencyModel::uniform(Duration::from_millis(10), Duration::from_millis(100), 11);
    let strategies = [StrategyConfig::intra_batch(16), StrategyConfig::pooled(16, 2 * bs)];

    let mut streams = Vec::new();
    for strategy in strategies {
        let dataset = sim_dataset(1024, 512, model.clone(), VirtualClock::shared());
        let config = LoaderConfig { num_workers: 2, prefetch_factor: 2, strategy, ..Default::default() };
        let mut loader = Loader::new(config, dataset, make_epoch_plan(1024, bs, true, false, 3, 0)).unwrap();
        let mut stream = Vec::new();
        while let Some(batch) = loader.next_batch().await.unwrap() {
            stream.push((batch.batch_id, batch.samples.iter().map(|s| (s.item.index, s.payload_digest)).collect::<Vec<_>>()));
        }
        streams.push(stream);
    }

    let mut throughputs = Vec::new();
    for strategy in strategies {
        let mut cfg = experiment(1024, 512, model.clone());
        cfg.loader = LoaderConfig { num_workers: 2, prefetch_factor: 2, strategy, ..Default::default() };
        cfg.batch_size = bs;
        cfg.epochs = 2;
        cfg.clock = ClockMode::Virtual;
        // run the blocking harness off the paused test runtime
        let s = std::thread::spawn(move || run_experiment(&cfg).unwrap()).join().unwrap();
        throughputs.push(s.throughput_img_s);
    }
    let rel = throughputs[1] / throughputs[0] - 1.0;
    let ok = streams[0] == streams[1] && rel.abs() <= 0.20;
    report(
        "disassembly parity",
        ok,
        format!(
            "content identical: {}, intra {:.1} img/s vs pooled {:.1} img/s ({:+.1}%)",
            streams[0] == streams[1],
            throughputs[0],
            throughputs[1],
            rel * 100.0
        ),
    );
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn lazy_initialization() {
    let started = Instant::now();
    let mut measured = Vec::new();
    for mode in [StartupMode::Lazy, StartupMode::Blocking] {
        let clock = MonotonicClock::shared();
        let dataset = sim_dataset(64, 1024, LatencyModel::fixed(Duration::from_millis(5)), clock.clone());
        let config = LoaderConfig {
            num_workers: 8,
            prefetch_factor: 2,
            worker_startup_delay_s: 0.2,
            startup: mode,
            ..Default::default()
        };
        let t_new = Instant::now();
        let mut loader = Loader::new(config, dataset, make_epoch_plan(64, 4, true, false, 0, 0)).unwrap();
        let construct = t_new.elapsed().as_secs_f64();
        let t_call = clock.now();
        loader.next_batch().await.unwrap().unwrap();
        let first_fetch = loader.state().first_fetch_at.unwrap() - t_call;
        loader.shutdown().await;
        measured.push((construct, first_fetch));
    }
    let elapsed = started.elapsed().as_secs_f64();
    let (lazy_new, lazy_first) = measured[0];
    let (_, blocking_first) = measured[1];
    let ok = lazy_new < 0.05 && lazy_first < 0.3 && blocking_first >= 1.6 && elapsed < 5.0;
    report(
        "lazy initialization",
        ok,
        format!(
            "new {:.2} ms, first dispatch {lazy_first:.3} s after first next_batch, blocking shim {blocking_first:.3} s",
            lazy_new * 1e3
        ),
    );
}

#[test]
fn cache_semantics() {
    let started = Instant::now();
    let n = 2048;
    let bytes = 4096;
    let mut cfg = experiment(n, bytes, LatencyModel::uniform(Duration::from_millis(20), Duration::from_millis(80), 5));
    cfg.cache = Some(CacheConfig { capacity_bytes: n as u64 * bytes });
    cfg.epochs = 2;
    cfg.batch_size = 64;
    cfg.clock = ClockMode::Virtual;
    let out = run_experiment_full(&cfg).unwrap();
    let items_2 = of_kind(&out.events, EventKind::GetItem, Some(1));
    let hits_2 = of_kind(&out.events, EventKind::CacheHit, Some(1)).len();
    let hit_rate = hits_2 as f64 / items_2.len() as f64;
    let epoch_median = |epoch| {
        let records: Vec<EventRecord> = of_kind(&out.events, EventKind::GetItem, Some(epoch)).into_iter().cloned().collect();
        median_span(&records, EventKind::GetItem).unwrap()
    };
    let (m1, m2) = (epoch_median(0), epoch_median(1));

    let (max_resident, evictions, ops) = concurrent_cache_bound();
    let capacity = CONCURRENT_CAPACITY;
    let elapsed = started.elapsed().as_secs_f64();
    let ok = items_2.len() == n && hit_rate == 1.0 && m2 <= 0.1 * m1 && max_resident <= capacity && elapsed < 30.0;
    report(
        "cache semantics",
        ok,
        format!(
            "epoch-2 hit rate {:.1}%, median get_item {m1:.4} s -> {m2:.4} s; {ops} concurrent ops, peak resident {max_resident} <= {capacity} ({evictions} evictions)",
            hit_rate * 100.0
        ),
    );
}

const CONCURRENT_CAPACITY: u64 = 256 * 1024;

/// 64 tasks on a multi-threaded runtime hammer one cache; returns the largest
/// resident size seen after any operation.
fn concurrent_cache_bound() -> (u64, u64, usize) {
    let runtime = tokio::runtime::Builder::new_multi_thread().worker_threads(8).enable_all().build().unwrap();
    runtime.block_on(async {
        let clock = MonotonicClock::shared();
        let items = generate_manifest(1000, SizeDistribution::Lognormal { median_bytes: 2000, sigma: 0.8 }, 2);
        let store = Arc::new(LatencySimStore::new(
            LatencyModel::fixed(Duration::ZERO),
            items.iter().map(|i| (i.key.clone(), i.size_bytes)),
            clock,
        ));
        let cache = Arc::new(ByteLruCache::new(CacheConfig { capacity_bytes: CONCURRENT_CAPACITY }));
        let per_task = 10_000usize.div_ceil(64);
        let tasks: Vec<_> = (0..64u64)
            .map(|t| {
                let (cache, store, items) = (cache.clone(), store.clone(), items.clone());
                tokio::spawn(async move {
                    let mut rng = ChaCha8Rng::seed_from_u64(t);
                    let mut peak = 0;
                    for _ in 0..per_task {
                        let key = &items[rng.gen_range(0..items.len())].key;
                        if rng.gen_bool(0.8) {
                            cache.cached_fetch(store.as_ref() as &dyn Store, key).await.unwrap();
                        } else {
                            cache.get(key);
                        }
                        peak = peak.max(cache.resident_bytes());
                        tokio::task::yield_now().await;
                    }
                    peak
                })
            })
            .collect();
        let peaks = futures::stream::iter(tasks).then(|t| async { t.await.unwrap() }).collect::<Vec<_>>().await;
        let peak = peaks.into_iter().max().unwrap().max(cache.high_water_bytes());
        (peak, cache.stats().evictions, per_task * 64)
    })
}

#[test]
fn pool_bench_plateau() {
    let started = Instant::now();
    let latency = 0.05;
    let item = 115 * 1024u64;
    let bandwidth = 16.0 * 1024.0 * 1024.0;
    let mut cfg = experiment(15_000, item, LatencyModel::fixed(Duration::from_secs_f64(latency)).with_bandwidth(bandwidth));
    cfg.clock = ClockMode::Virtual;
    let params = PoolBenchParams { pool_sizes: TABLE_POOL_SIZES.to_vec(), groups: 4, draws_per_group: 500 };
    let rows = run_dataset_pool_bench(&params, &cfg).unwrap();

    let cap_mbit = bandwidth * 8.0 / (1024.0 * 1024.0);
    // token-bucket oracle: p requests in flight saturate the link once
    // p * item / (latency + transfer) reaches the bandwidth
    let transfer = item as f64 / bandwidth;
    let saturating = (latency + transfer) / transfer;
    let cap_index = rows.iter().position(|r| r.pool_size as f64 >= saturating).unwrap();
    let rising = rows[..=cap_index].windows(2).all(|w| w[1].throughput_mbit_s >= w[0].throughput_mbit_s);
    let plateau = rows[cap_index..].iter().all(|r| (r.throughput_mbit_s / cap_mbit - 1.0).abs() <= 0.05);

    let serial = &rows[0];
    let draws = (params.groups * params.draws_per_group) as f64;
    let identity = serial.total_bytes as f64 / draws * 8.0 / (1024.0 * 1024.0) / serial.mean_request_s;
    let serial_ok = (serial.throughput_mbit_s / identity - 1.0).abs() <= 0.02;
    let elapsed = started.elapsed().as_secs_f64();
    let curve: Vec<String> = rows.iter().map(|r| format!("{}:{:.1}", r.pool_size, r.throughput_mbit_s)).collect();
    report(
        "pool-bench plateau",
        rising && plateau && serial_ok && elapsed < 60.0,
        format!(
            "cap {cap_mbit:.0} Mbit/s reached at pool {}; serial {:.3} vs identity {identity:.3}; {}",
            rows[cap_index].pool_size,
            serial.throughput_mbit_s,
            curve.join(" ")
        ),
    );
}

#[test]
fn fade_analysis_shape() {
    let mut cfg = experiment(2000, 1024, LatencyModel::uniform(Duration::from_millis(5), Duration::from_millis(60), 3));
    cfg.epochs = 2;
    cfg.batch_size = 32;
    let out = run_experiment_full(&cfg).unwrap();
    let items = of_kind(&out.events, EventKind::GetItem, None).len() as u64;
    let fade = fade_analysis(&out.events, DEFAULT_FADE_BINS).unwrap();
    let conserved = fade.starts.iter().sum::<u64>() == items && fade.finishes.iter().sum::<u64>() == items;

    // ramp: start times with density growing linearly over 100 s
    let ramp: Vec<EventRecord> = (0..10_000)
        .map(|k| {
            let t = 100.0 * (k as f64 / 10_000.0).sqrt();
            EventRecord::new(EventKind::GetItem, t, t + 0.5)
        })
        .collect();
    let fade = fade_analysis(&ramp, DEFAULT_FADE_BINS).unwrap();
    let decile = DEFAULT_FADE_BINS / 10;
    let first: u64 = fade.starts[..decile].iter().sum();
    let last: u64 = fade.starts[DEFAULT_FADE_BINS - decile..].iter().sum();
    let ramp_conserved = fade.starts.iter().sum::<u64>() == 10_000 && fade.finishes.iter().sum::<u64>() == 10_000;
    report(
        "fade analysis",
        conserved && ramp_conserved && first < last,
        format!("{items} run items conserved: {conserved}; ramp first decile {first} < last decile {last}"),
    );
}

/// Coverage by 1 ms cells; a cell counts as busy when its midpoint is covered.
fn coverage_scan(log: &[EventRecord], busy: &[EventKind], t_i: f64, t_f: f64) -> f64 {
    let cells = ((t_f - t_i) * 1000.0).round() as usize;
    let idle = (0..cells)
        .filter(|&c| {
            let t = t_i + (c as f64 + 0.5) / 1000.0;
            !log.iter().any(|r| busy.contains(&r.kind) && r.t_start <= t && t < r.t_end)
        })
        .count();
    100.0 * idle as f64 / cells as f64
}

fn sort_median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

#[test]
fn metrics_oracles() {
    let busy = [EventKind::TrainStep, EventKind::ToDevice];
    let kinds = [EventKind::TrainStep, EventKind::ToDevice, EventKind::GetItem, EventKind::GetBatch];
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst: f64 = 0.0;
    let mut median_mismatches = 0;
    for _ in 0..100 {
        let runtime_ms = rng.gen_range(1_000..20_000);
        let log: Vec<EventRecord> = (0..rng.gen_range(1..60))
            .map(|_| {
                let a = rng.gen_range(-200..runtime_ms) as f64 / 1000.0;
                let d = rng.gen_range(0..3_000) as f64 / 1000.0;
                EventRecord::new(kinds[rng.gen_range(0..kinds.len())], a, a + d)
            })
            .collect();
        let t_f = runtime_ms as f64 / 1000.0;
        let fast = idle_fraction(&log, &busy, Some((0.0, t_f))).unwrap();
        worst = worst.max((fast - coverage_scan(&log, &busy, 0.0, t_f)).abs());

        let spans: Vec<f64> = (0..rng.gen_range(1..200)).map(|_| rng.gen_range(0.0..5.0)).collect();
        let records: Vec<EventRecord> = spans.iter().map(|&d| EventRecord::new(EventKind::GetBatch, 1.0, 1.0 + d)).collect();
        let durations: Vec<f64> = records.iter().map(EventRecord::duration).collect();
        if median_span(&records, EventKind::GetBatch).unwrap() != sort_median(&durations) {
            median_mismatches += 1;
        }
    }
    report(
        "metrics oracles",
        worst <= 0.1 && median_mismatches == 0,
        format!("max idle-fraction deviation {worst:.4} pp over 100 logs; {median_mismatches} median mismatches"),
    );
}
