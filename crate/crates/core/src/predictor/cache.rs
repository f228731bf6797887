//! LRU cache of frozen memory banks keyed by support content and bank
//! configuration, with optional spill to `MBK1` files.

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use sha2::{Digest, Sha256};

use crate::error::Result;
use crate::memory::MemoryBank;

pub const DEFAULT_CACHE_ENTRIES: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct CacheKey([u8; 32]);

impl CacheKey {
    pub fn hex(&self) -> String {
        self.0.iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Incremental builder for a [`CacheKey`]; every field is length-prefixed.
pub(crate) struct KeyHasher(Sha256);

impl KeyHasher {
    pub fn new(domain: &str) -> Self {
        let mut h = KeyHasher(Sha256::new());
        h.str(domain);
        h
    }

    pub fn str(&mut self, s: &str) -> &mut Self {
        self.u64(s.len() as u64);
        self.0.update(s.as_bytes());
        self
    }

    pub fn u64(&mut self, v: u64) -> &mut Self {
        self.0.update(v.to_le_bytes());
        self
    }

    pub fn finish(self) -> CacheKey {
        CacheKey(self.0.finalize().into())
    }
}

#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
pub struct CacheStats {
    pub hits: usize,
    pub misses: usize,
    pub disk_loads: usize,
    pub spills: usize,
}

#[derive(Default)]
struct Lru {
    entries: HashMap<CacheKey, (Arc<MemoryBank>, u64)>,
    tick: u64,
}

/// Thread-safe bank cache. Builds run outside the lock; when two threads race
/// on one key the first insertion wins and both get the same bank.
pub struct BankCache {
    capacity: usize,
    spill_dir: Option<PathBuf>,
    inner: Mutex<Lru>,
    hits: AtomicUsize,
    misses: AtomicUsize,
    disk_loads: AtomicUsize,
    spills: AtomicUsize,
}

impl Default for BankCache {
    fn default() -> Self {
        Self::new(DEFAULT_CACHE_ENTRIES)
    }
}

impl BankCache {
    /// `capacity = 0` disables in-memory caching.
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity,
            spill_dir: None,
            inner: Mutex::new(Lru::default()),
            hits: AtomicUsize::new(0),
            misses: AtomicUsize::new(0),
            disk_loads: AtomicUsize::new(0),
            spills: AtomicUsize::new(0),
        }
    }

    pub fn with_spill_dir(mut self, dir: impl Into<PathBuf>) -> Self {
        self.spill_dir = Some(dir.into());
        self
    }

    pub fn stats(&self) -> CacheStats {
        CacheStats {
            hits: self.hits.load(Ordering::Relaxed),
            misses: self.misses.load(Ordering::Relaxed),
            disk_loads: self.disk_loads.load(Ordering::Relaxed),
            spills: self.spills.load(Ordering::Relaxed),
        }
    }

    pub fn len(&self) -> usize {
        self.inner.lock().unwrap().entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn spill_path(&self, key: &CacheKey) -> Option<PathBuf> {
        self.spill_dir.as_ref().map(|d| d.join(format!("{}.mbk", key.hex())))
    }

    pub fn get_or_build(
        &self,
        key: CacheKey,
        build: impl FnOnce() -> Result<MemoryBank>,
    ) -> Result<Arc<MemoryBank>> {
        {
            let mut lru = self.inner.lock().unwrap();
            lru.tick += 1;
            let tick = lru.tick;
            if let Some((bank, last)) = lru.entries.get_mut(&key) {
                *last = tick;
                self.hits.fetch_add(1, Ordering::Relaxed);
                return Ok(Arc::clone(bank));
            }
        }
        self.misses.fetch_add(1, Ordering::Relaxed);

        let spilled = self.spill_path(&key).filter(|p| p.is_file());
        let bank = match spilled {
            Some(path) => match MemoryBank::load(&path) {
                Ok(bank) => {
                    self.disk_loads.fetch_add(1, Ordering::Relaxed);
                    bank
                }
                Err(e) => {
                    log::warn!("ignoring unreadable cached bank: {e}");
                    build()?
                }
            },
            None => build()?,
        };
        let bank = Arc::new(bank);
        if self.capacity == 0 {
            return Ok(bank);
        }

        let mut lru = self.inner.lock().unwrap();
        lru.tick += 1;
        let tick = lru.tick;
        if let Some((existing, last)) = lru.entries.get_mut(&key) {
            *last = tick;
            return Ok(Arc::clone(existing));
        }
        lru.entries.insert(key, (Arc::clone(&bank), tick));
        while lru.entries.len() > self.capacity {
            let (&oldest, _) = lru
                .entries
                .iter()
                .min_by_key(|(_, (_, t))| *t)
                .expect("non-empty");
            let (evicted, _) = lru.entries.remove(&oldest).expect("present");
            if let Some(path) = self.spill_path(&oldest) {
                match evicted.save(&path) {
                    Ok(()) => {
                        self.spills.fetch_add(1, Ordering::Relaxed);
                    }
                    Err(e) => log::warn!("could not spill bank: {e}"),
                }
            }
        }
        Ok(bank)
    }
}
