//! Epoch planning: shuffling item indices and cutting them into batch plans.
//!
//! Shuffling is a Fisher–Yates pass driven by SplitMix64, chosen because it
//! is short enough to port bit-exactly: the generator for epoch `e` of seed
//! `s` is seeded with `mix(s ^ mix(e + GOLDEN))`, and the swap partner for
//! position `i` is `(next() as u128 * (i + 1) as u128) >> 64`.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BatchPlan {
    pub batch_id: u64,
    pub indices: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpochPlan {
    pub epoch: u32,
    pub seed: u64,
    pub plans: Vec<BatchPlan>,
}

impl EpochPlan {
    pub fn len(&self) -> usize {
        self.plans.len()
    }

    pub fn is_empty(&self) -> bool {
        self.plans.is_empty()
    }

    pub fn item_count(&self) -> usize {
        self.plans.iter().map(|p| p.indices.len()).sum()
    }
}

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// SplitMix64.
#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    pub fn for_epoch(seed: u64, epoch: u32) -> Self {
        Self::new(mix(seed ^ mix((epoch as u64).wrapping_add(GOLDEN))))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN);
        mix(self.state)
    }

    /// Value in `0..bound` by multiply-shift.
    pub fn below(&mut self, bound: u64) -> u64 {
        ((self.next_u64() as u128 * bound as u128) >> 64) as u64
    }
}

pub fn shuffled_indices(n: usize, seed: u64, epoch: u32) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = SplitMix64::for_epoch(seed, epoch);
    for i in (1..n).rev() {
        let j = rng.below(i as u64 + 1) as usize;
        order.swap(i, j);
    }
    order
}

/// Partitions `0..n` (shuffled when requested) into consecutive plans.
///
/// # Panics
/// If `batch_size` is zero.
pub fn make_epoch_plan(
    n: usize,
    batch_size: usize,
    shuffle: bool,
    drop_last: bool,
    seed: u64,
    epoch: u32,
) -> EpochPlan {
    assert!(batch_size >= 1, "batch_size must be at least 1");
    let order = if shuffle {
        shuffled_indices(n, seed, epoch)
    } else {
        (0..n).collect()
    };
    let plans = order
        .chunks(batch_size)
        .filter(|chunk| !drop_last || chunk.len() == batch_size)
        .enumerate()
        .map(|(batch_id, chunk)| BatchPlan {
            batch_id: batch_id as u64,
            indices: chunk.to_vec(),
        })
        .collect();
    EpochPlan { epoch, seed, plans }
}
