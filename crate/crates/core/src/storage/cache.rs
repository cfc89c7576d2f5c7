//! Byte-bounded LRU cache placed between the dataset and a store.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

use bytes::Bytes;
use lru::LruCache;
use serde::{Deserialize, Serialize};

use super::{Store, StoreError};

/// 2 GiB.
pub const DEFAULT_CACHE_CAPACITY: u64 = 2 * 1024 * 1024 * 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheConfig {
    pub capacity_bytes: u64,
}

impl Default for CacheConfig {
    fn default() -> Self {
        Self { capacity_bytes: DEFAULT_CACHE_CAPACITY }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheStats {
    pub hits: u64,
    pub misses: u64,
    pub evictions: u64,
    pub resident_bytes: u64,
}

impl CacheStats {
    pub fn hit_rate(&self) -> f64 {
        let total = self.hits + self.misses;
        if total == 0 {
            0.0
        } else {
            self.hits as f64 / total as f64
        }
    }
}

struct Resident {
    entries: LruCache<String, Bytes>,
    bytes: u64,
    high_water: u64,
}

pub struct ByteLruCache {
    capacity: u64,
    resident: Mutex<Resident>,
    hits: AtomicU64,
    misses: AtomicU64,
    evictions: AtomicU64,
}

impl std::fmt::Debug for ByteLruCache {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ByteLruCache")
            .field("capacity", &self.capacity)
            .field("stats", &self.stats())
            .finish()
    }
}

impl ByteLruCache {
    pub fn new(config: CacheConfig) -> Self {
        Self {
            capacity: config.capacity_bytes,
            resident: Mutex::new(Resident {
                entries: LruCache::unbounded(),
                bytes: 0,
                high_water: 0,
            }),
            hits: AtomicU64::new(0),
            misses: AtomicU64::new(0),
            evictions: AtomicU64::new(0),
        }
    }

    pub fn capacity(&self) -> u64 {
        self.capacity
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, Resident> {
        self.resident.lock().expect("cache lock poisoned")
    }

    /// Returns the resident copy and promotes it to most recently used.
    pub fn get(&self, key: &str) -> Option<Bytes> {
        self.lock().entries.get(key).cloned()
    }

    /// Inserts `value`, evicting least recently used entries until it fits.
    /// Values larger than the capacity are not stored.
    pub fn insert(&self, key: &str, value: Bytes) {
        let size = value.len() as u64;
        if size > self.capacity {
            return;
        }
        let mut resident = self.lock();
        if let Some(old) = resident.entries.pop(key) {
            resident.bytes -= old.len() as u64;
        }
        while resident.bytes + size > self.capacity {
            match resident.entries.pop_lru() {
                Some((_, evicted)) => {
                    resident.bytes -= evicted.len() as u64;
                    self.evictions.fetch_add(1, Ordering::Relaxed);
                }
                None => break,
            }
        }
        resident.entries.put(key.to_string(), value);
        resident.bytes += size;
        resident.high_water = resident.high_water.max(resident.bytes);
        debug_assert!(resident.bytes <= self.capacity);
    }

    /// Serves `key` from the cache, or fetches it from `store` and inserts it.
    pub async fn cached_fetch(
        &self,
        store: &dyn Store,
        key: &str,
    ) -> Result<(Bytes, bool), StoreError> {
        if let Some(bytes) = self.get(key) {
            self.hits.fetch_add(1, Ordering::Relaxed);
            return Ok((bytes, true));
        }
        self.misses.fetch_add(1, Ordering::Relaxed);
        let bytes = store.fetch(key).await?;
        self.insert(key, bytes.clone());
        Ok((bytes, false))
    }

    pub fn resident_bytes(&self) -> u64 {
        self.lock().bytes
    }

    /// Largest resident size ever observed.
    pub fn high_water_bytes(&self) -> u64 {
        self.lock().high_water
    }

    pub fn len(&self) -> usize {
        self.lock().entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn stats(&self) -> CacheStats {
        CacheStats {
            hits: self.hits.load(Ordering::Relaxed),
            misses: self.misses.load(Ordering::Relaxed),
            evictions: self.evictions.load(Ordering::Relaxed),
            resident_bytes: self.resident_bytes(),
        }
    }
}
