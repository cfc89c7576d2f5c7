//! In-memory store that shapes every request with a seeded latency model
//! and an optional shared bandwidth cap.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use async_trait::async_trait;
use bytes::Bytes;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution as _, LogNormal};
use serde::{Deserialize, Serialize};

use super::{Store, StoreError};
use crate::clock::SharedClock;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "distribution", rename_all = "snake_case")]
pub enum Distribution {
    Fixed { latency_s: f64 },
    Uniform { min_s: f64, max_s: f64 },
    /// `median_s` is `exp(mu)`; `sigma` is the shape of the underlying normal.
    Lognormal { median_s: f64, sigma: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyModel {
    #[serde(flatten)]
    pub distribution: Distribution,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bandwidth_bytes_per_s: Option<f64>,
    #[serde(default)]
    pub seed: u64,
}

impl LatencyModel {
    pub fn fixed(latency: Duration) -> Self {
        Self {
            distribution: Distribution::Fixed { latency_s: latency.as_secs_f64() },
            bandwidth_bytes_per_s: None,
            seed: 0,
        }
    }

    pub fn uniform(min: Duration, max: Duration, seed: u64) -> Self {
        Self {
            distribution: Distribution::Uniform {
                min_s: min.as_secs_f64(),
                max_s: max.as_secs_f64(),
            },
            bandwidth_bytes_per_s: None,
            seed,
        }
    }

    pub fn with_bandwidth(mut self, bytes_per_s: f64) -> Self {
        self.bandwidth_bytes_per_s = Some(bytes_per_s);
        self
    }

    pub fn validate(&self) -> Result<(), String> {
        let finite_nonneg = |v: f64| v.is_finite() && v >= 0.0;
        match self.distribution {
            Distribution::Fixed { latency_s } if !finite_nonneg(latency_s) => {
                return Err(format!("latency_s must be >= 0, got {latency_s}"))
            }
            Distribution::Uniform { min_s, max_s }
                if !finite_nonneg(min_s) || !finite_nonneg(max_s) || min_s > max_s =>
            {
                return Err(format!("uniform bounds must satisfy 0 <= min <= max, got [{min_s}, {max_s}]"))
            }
            Distribution::Lognormal { median_s, sigma }
                if !(median_s.is_finite() && median_s > 0.0) || !finite_nonneg(sigma) =>
            {
                return Err(format!("lognormal needs median > 0 and sigma >= 0, got {median_s}, {sigma}"))
            }
            _ => {}
        }
        if let Some(bw) = self.bandwidth_bytes_per_s {
            if !(bw.is_finite() && bw > 0.0) {
                return Err(format!("bandwidth must be > 0, got {bw}"));
            }
        }
        Ok(())
    }

    /// Latency of the `request_index`-th request. A pure function of
    /// `(seed, request_index)`, so replays are bit-identical.
    pub fn sample(&self, request_index: u64) -> Duration {
        let secs = match self.distribution {
            Distribution::Fixed { latency_s } => latency_s,
            Distribution::Uniform { min_s, max_s } => {
                if max_s > min_s {
                    self.rng_for(request_index).gen_range(min_s..max_s)
                } else {
                    min_s
                }
            }
            Distribution::Lognormal { median_s, sigma } => {
                let dist = LogNormal::new(median_s.ln(), sigma).expect("validated parameters");
                dist.sample(&mut self.rng_for(request_index))
            }
        };
        Duration::from_secs_f64(secs.max(0.0))
    }

    fn rng_for(&self, request_index: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(request_index);
        rng
    }
}

/// Deterministic content for `key`: a per-key 512-byte block tiled to `size`.
pub fn synthetic_payload(key: &str, size: u64) -> Bytes {
    let mut state = twox_hash::xxh3::hash64(key.as_bytes());
    let mut block = Vec::with_capacity(512);
    for _ in 0..64 {
        state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
        let mut z = state;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        block.extend_from_slice(&(z ^ (z >> 31)).to_le_bytes());
    }
    let size = size as usize;
    let mut payload = block.repeat(size.div_ceil(block.len()).max(1));
    payload.truncate(size);
    Bytes::from(payload)
}

/// Shared link: transfers are serialized at `bytes_per_s`, so aggregate
/// throughput never exceeds the cap while per-request latency overlaps.
#[derive(Debug)]
struct Link {
    bytes_per_s: f64,
    free_at: Mutex<f64>,
}

impl Link {
    fn reserve(&self, now: f64, bytes: u64) -> f64 {
        let mut free_at = self.free_at.lock().expect("link lock poisoned");
        let start = now.max(*free_at);
        let end = start + bytes as f64 / self.bytes_per_s;
        *free_at = end;
        end
    }
}

#[derive(Debug)]
pub struct LatencySimStore {
    model: LatencyModel,
    sizes: HashMap<String, u64>,
    link: Option<Link>,
    requests: AtomicU64,
    clock: SharedClock,
}

impl LatencySimStore {
    pub fn new(
        model: LatencyModel,
        items: impl IntoIterator<Item = (String, u64)>,
        clock: SharedClock,
    ) -> Self {
        let link = model.bandwidth_bytes_per_s.map(|bytes_per_s| Link {
            bytes_per_s,
            free_at: Mutex::new(0.0),
        });
        Self {
            model,
            sizes: items.into_iter().collect(),
            link,
            requests: AtomicU64::new(0),
            clock,
        }
    }

    pub fn model(&self) -> &LatencyModel {
        &self.model
    }

    pub fn len(&self) -> usize {
        self.sizes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sizes.is_empty()
    }
}

#[async_trait]
impl Store for LatencySimStore {
    async fn fetch(&self, key: &str) -> Result<Bytes, StoreError> {
        let index = self.requests.fetch_add(1, Ordering::Relaxed);
        let latency = self.model.sample(index);
        self.clock.sleep(latency).await;
        let size = *self
            .sizes
            .get(key)
            .ok_or_else(|| StoreError::KeyNotFound(key.to_string()))?;
        if let Some(link) = &self.link {
            let done = link.reserve(self.clock.now(), size);
            self.clock.sleep_until(done).await;
        }
        Ok(synthetic_payload(key, size))
    }

    fn request_count(&self) -> u64 {
        self.requests.load(Ordering::Relaxed)
    }
}
