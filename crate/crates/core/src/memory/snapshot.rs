//! `MBK1` bank snapshots.
//!
//! Layout: magic `MBK1`, little-endian `u32` key dim, `u32` value dim,
//! `u32` entry count, `u32` long-term count, then keys, values and usage as
//! little-endian `f32` arrays, then a JSON trailer with configuration and
//! per-entry source bookkeeping.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{EntrySource, MemoryBank, MemoryConfig};
use crate::error::{Error, Result};
use crate::io::write_atomic;

pub const BANK_MAGIC: &[u8; 4] = b"MBK1";

#[derive(Serialize, Deserialize)]
struct Trailer {
    capacity: usize,
    prototype_budget: usize,
    next_seq: u64,
    entries: Vec<TrailerEntry>,
}

#[derive(Serialize, Deserialize)]
struct TrailerEntry {
    pair_id: String,
    patch: u32,
    seq: u64,
}

impl MemoryBank {
    pub fn to_bytes(&self) -> Vec<u8> {
        let n = self.len();
        let mut out = Vec::with_capacity(20 + 4 * (self.keys.len() + self.values.len() + n));
        out.extend_from_slice(BANK_MAGIC);
        for v in [self.key_dim, self.value_dim, n, self.longterm_count] {
            out.extend_from_slice(&(v as u32).to_le_bytes());
        }
        for v in self.keys.iter().chain(&self.values).chain(&self.usage) {
            out.extend_from_slice(&v.to_le_bytes());
        }
        let trailer = Trailer {
            capacity: self.config.capacity,
            prototype_budget: self.config.prototype_budget,
            next_seq: self.next_seq,
            entries: self
                .sources
                .iter()
                .zip(&self.seq)
                .map(|(s, &seq)| TrailerEntry {
                    pair_id: s.pair_id.clone(),
                    patch: s.patch,
                    seq,
                })
                .collect(),
        };
        out.extend(serde_json::to_vec(&trailer).expect("trailer serializes"));
        out
    }

    /// Parses a snapshot; `path` is only used in error messages.
    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        if bytes.len() < 4 || &bytes[..4] != BANK_MAGIC {
            return Err(Error::format(path, 0, "bad magic, expected MBK1"));
        }
        if bytes.len() < 20 {
            return Err(Error::format(path, bytes.len() as u64, "truncated header"));
        }
        let word = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize;
        let (key_dim, value_dim, n, longterm_count) = (word(0), word(1), word(2), word(3));
        let floats = n * (key_dim + value_dim + 1);
        let body_end = 20 + 4 * floats;
        if bytes.len() < body_end {
            return Err(Error::format(
                path,
                bytes.len() as u64,
                format!("truncated body, expected {floats} f32 values"),
            ));
        }
        let mut arrays = Vec::with_capacity(floats);
        for (i, chunk) in bytes[20..body_end].chunks_exact(4).enumerate() {
            let v = f32::from_le_bytes(chunk.try_into().unwrap());
            if !v.is_finite() {
                return Err(Error::format(path, (20 + 4 * i) as u64, "non-finite value"));
            }
            arrays.push(v);
        }
        let trailer: Trailer = serde_json::from_slice(&bytes[body_end..])
            .map_err(|e| Error::format(path, body_end as u64, format!("bad trailer: {e}")))?;
        if trailer.entries.len() != n {
            return Err(Error::format(
                path,
                body_end as u64,
                format!("trailer lists {} entries, header says {n}", trailer.entries.len()),
            ));
        }
        let config = MemoryConfig {
            capacity: trailer.capacity,
            prototype_budget: trailer.prototype_budget,
        };
        config.validate()?;

        let values_start = n * key_dim;
        let usage_start = values_start + n * value_dim;
        let bank = MemoryBank {
            config,
            key_dim,
            value_dim,
            keys: arrays[..values_start].to_vec(),
            values: arrays[values_start..usage_start].to_vec(),
            usage: arrays[usage_start..].to_vec(),
            sources: trailer
                .entries
                .iter()
                .map(|e| EntrySource {
                    pair_id: e.pair_id.clone(),
                    patch: e.patch,
                })
                .collect(),
            seq: trailer.entries.iter().map(|e| e.seq).collect(),
            longterm_count,
            next_seq: trailer.next_seq,
        };
        bank.check_invariants()
            .map_err(|e| Error::format(path, body_end as u64, e.to_string()))?;
        Ok(bank)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }
}
