//! Key/value memory populated from support pairs.
//!
//! Entries are stored in two contiguous regions: long-term prototypes first
//! (`0..longterm_count`), then working-memory entries in insertion order.
//! Once populated, a bank is read-only; readout usage statistics go to a
//! separate [`UsageAccumulator`] that the owner may merge back.
//!
//! Similarity between a query key `q` and a stored key `k` is
//! `-‖q − k‖² / (temperature · √dim)`, normalized with a softmax over the
//! (optionally top-k truncated) entries.

mod snapshot;

pub use snapshot::BANK_MAGIC;

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::encoder::{FeatureGrid, PatchGrid, ValueGrid};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MemoryConfig {
    /// Maximum working-memory entries before consolidation.
    pub capacity: usize,
    /// Maximum long-term prototypes.
    pub prototype_budget: usize,
}

impl Default for MemoryConfig {
    fn default() -> Self {
        Self {
            capacity: 4096,
            prototype_budget: 128,
        }
    }
}

impl MemoryConfig {
    pub fn validate(&self) -> Result<()> {
        if self.capacity < 2 {
            return Err(Error::Config("memory capacity must be ≥ 2".into()));
        }
        if self.prototype_budget == 0 || self.prototype_budget > self.capacity / 2 {
            return Err(Error::Config(format!(
                "prototype_budget must be in 1..={} for capacity {}",
                self.capacity / 2,
                self.capacity
            )));
        }
        Ok(())
    }
}

/// Where an entry came from: a support pair and a row-major patch index.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EntrySource {
    pub pair_id: String,
    pub patch: u32,
}

/// Softmax weights over every entry of a bank, index-aligned with it.
#[derive(Debug, Clone, PartialEq)]
pub struct AffinityRow {
    pub weights: Vec<f64>,
}

impl AffinityRow {
    pub fn nonzero(&self) -> usize {
        self.weights.iter().filter(|&&w| w > 0.0).count()
    }
}

/// Outcome of one consolidation pass. Entries are identified by insertion
/// sequence number.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConsolidationReport {
    pub performed: bool,
    pub prototypes: Vec<u64>,
    pub retained: Vec<u64>,
    /// `(evicted, prototype)` pairs in eviction order.
    pub assignments: Vec<(u64, u64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MemoryBank {
    config: MemoryConfig,
    key_dim: usize,
    value_dim: usize,
    keys: Vec<f32>,
    values: Vec<f32>,
    usage: Vec<f32>,
    sources: Vec<EntrySource>,
    seq: Vec<u64>,
    longterm_count: usize,
    next_seq: u64,
}

impl MemoryBank {
    pub fn new(config: MemoryConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            key_dim: 0,
            value_dim: 0,
            keys: Vec::new(),
            values: Vec::new(),
            usage: Vec::new(),
            sources: Vec::new(),
            seq: Vec::new(),
            longterm_count: 0,
            next_seq: 0,
        })
    }

    pub fn config(&self) -> &MemoryConfig {
        &self.config
    }

    pub fn len(&self) -> usize {
        self.seq.len()
    }

    pub fn is_empty(&self) -> bool {
        self.seq.is_empty()
    }

    pub fn working_count(&self) -> usize {
        self.len() - self.longterm_count
    }

    pub fn longterm_count(&self) -> usize {
        self.longterm_count
    }

    pub fn key_dim(&self) -> usize {
        self.key_dim
    }

    pub fn value_dim(&self) -> usize {
        self.value_dim
    }

    pub fn key(&self, i: usize) -> &[f32] {
        &self.keys[i * self.key_dim..(i + 1) * self.key_dim]
    }

    pub fn value(&self, i: usize) -> &[f32] {
        &self.values[i * self.value_dim..(i + 1) * self.value_dim]
    }

    pub fn usage(&self, i: usize) -> f32 {
        self.usage[i]
    }

    pub fn source(&self, i: usize) -> &EntrySource {
        &self.sources[i]
    }

    pub fn seq(&self, i: usize) -> u64 {
        self.seq[i]
    }

    /// Position of the entry with insertion number `seq`, if still stored.
    pub fn position_of(&self, seq: u64) -> Option<usize> {
        self.seq.iter().position(|&s| s == seq)
    }

    /// Appends one entry per patch with zero usage, consolidating if working
    /// memory overflows.
    pub fn add_support(
        &mut self,
        keys: &FeatureGrid,
        values: &ValueGrid,
        pair_id: &str,
    ) -> Result<ConsolidationReport> {
        if !keys.same_layout(values) {
            return Err(Error::DimensionMismatch(format!(
                "pair `{pair_id}`: key grid {}x{} and value grid {}x{} differ",
                keys.grid_h(),
                keys.grid_w(),
                values.grid_h(),
                values.grid_w()
            )));
        }
        if !self.is_empty() && (keys.dim() != self.key_dim || values.dim() != self.value_dim) {
            return Err(Error::DimensionMismatch(format!(
                "pair `{pair_id}`: key/value dims {}/{} but bank holds {}/{}",
                keys.dim(),
                values.dim(),
                self.key_dim,
                self.value_dim
            )));
        }
        if keys.is_empty() {
            return Ok(ConsolidationReport::default());
        }
        self.key_dim = keys.dim();
        self.value_dim = values.dim();
        self.keys.extend_from_slice(keys.data());
        self.values.extend_from_slice(values.data());
        for patch in 0..keys.len() {
            self.usage.push(0.0);
            self.sources.push(EntrySource {
                pair_id: pair_id.to_owned(),
                patch: patch as u32,
            });
            self.seq.push(self.next_seq);
            self.next_seq += 1;
        }
        if self.working_count() > self.config.capacity {
            Ok(self.consolidate())
        } else {
            Ok(ConsolidationReport::default())
        }
    }

    /// Condenses the bank.
    ///
    /// The `prototype_budget` entries with the highest usage (ties: earlier
    /// insertion first) become the long-term prototypes. Of the remaining
    /// working entries the most recent `capacity / 2` stay in working memory.
    /// Every other entry is evicted and folded into its nearest prototype by
    /// key distance: the prototype value becomes the `(1 + usage)`-weighted
    /// running mean of its own and the absorbed values, and the usage mass is
    /// added to the prototype.
    pub fn consolidate(&mut self) -> ConsolidationReport {
        let n = self.len();
        let budget = self.config.prototype_budget;
        if budget >= self.working_count() {
            log::warn!(
                "consolidation skipped: prototype budget {budget} ≥ working entries {}",
                self.working_count()
            );
            return ConsolidationReport::default();
        }

        let mut ranked: Vec<usize> = (0..n).collect();
        ranked.sort_by(|&a, &b| {
            self.usage[b]
                .total_cmp(&self.usage[a])
                .then(self.seq[a].cmp(&self.seq[b]))
        });
        let mut is_proto = vec![false; n];
        for &i in ranked.iter().take(budget) {
            is_proto[i] = true;
        }
        let mut protos: Vec<usize> = (0..n).filter(|&i| is_proto[i]).collect();
        protos.sort_by_key(|&i| self.seq[i]);

        let mut rest_working: Vec<usize> = (self.longterm_count..n).filter(|&i| !is_proto[i]).collect();
        rest_working.sort_by_key(|&i| self.seq[i]);
        let keep = self.config.capacity / 2;
        let retained: Vec<usize> = rest_working[rest_working.len().saturating_sub(keep)..].to_vec();
        let mut stays = is_proto.clone();
        for &i in &retained {
            stays[i] = true;
        }
        let mut evicted: Vec<usize> = (0..n).filter(|&i| !stays[i]).collect();
        evicted.sort_by_key(|&i| self.seq[i]);

        let vd = self.value_dim;
        let mut proto_values: Vec<f64> = protos
            .iter()
            .flat_map(|&p| self.value(p).iter().map(|&v| f64::from(v)))
            .collect();
        let mut proto_weight: Vec<f64> = protos.iter().map(|&p| 1.0 + f64::from(self.usage[p])).collect();
        let mut proto_usage: Vec<f64> = protos.iter().map(|&p| f64::from(self.usage[p])).collect();
        let mut assignments = Vec::with_capacity(evicted.len());

        for &e in &evicted {
            let ek = self.key(e);
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for (slot, &p) in protos.iter().enumerate() {
                let d = squared_distance(ek, self.key(p));
                if d < best_d {
                    best_d = d;
                    best = slot;
                }
            }
            let w = 1.0 + f64::from(self.usage[e]);
            let total = proto_weight[best] + w;
            for (j, &v) in self.value(e).iter().enumerate() {
                let slot = &mut proto_values[best * vd + j];
                *slot = (*slot * proto_weight[best] + f64::from(v) * w) / total;
            }
            proto_weight[best] = total;
            proto_usage[best] += f64::from(self.usage[e]);
            assignments.push((self.seq[e], self.seq[protos[best]]));
        }

        let order: Vec<usize> = protos.iter().chain(&retained).copied().collect();
        let mut keys = Vec::with_capacity(order.len() * self.key_dim);
        let mut values = Vec::with_capacity(order.len() * vd);
        let mut usage = Vec::with_capacity(order.len());
        let mut sources = Vec::with_capacity(order.len());
        let mut seq = Vec::with_capacity(order.len());
        for (slot, &i) in order.iter().enumerate() {
            keys.extend_from_slice(self.key(i));
            if slot < protos.len() {
                values.extend(proto_values[slot * vd..(slot + 1) * vd].iter().map(|&v| v as f32));
                usage.push(proto_usage[slot] as f32);
            } else {
                values.extend_from_slice(self.value(i));
                usage.push(self.usage[i]);
            }
            sources.push(self.sources[i].clone());
            seq.push(self.seq[i]);
        }

        let report = ConsolidationReport {
            performed: true,
            prototypes: protos.iter().map(|&i| self.seq[i]).collect(),
            retained: retained.iter().map(|&i| self.seq[i]).collect(),
            assignments,
        };
        self.keys = keys;
        self.values = values;
        self.usage = usage;
        self.sources = sources;
        self.seq = seq;
        self.longterm_count = protos.len();
        report
    }

    /// Affinity of one query key against every entry.
    pub fn affinity(&self, query: &[f32], temperature: f64, top_k: Option<usize>) -> Result<AffinityRow> {
        let sparse = self.sparse_affinity(query, temperature, top_k)?;
        let mut weights = vec![0.0; self.len()];
        for (i, w) in sparse {
            weights[i] = w;
        }
        Ok(AffinityRow { weights })
    }

    /// Nonzero affinity weights as `(entry, weight)` in a content-determined
    /// order, so downstream sums do not depend on entry positions.
    fn sparse_affinity(&self, query: &[f32], temperature: f64, top_k: Option<usize>) -> Result<Vec<(usize, f64)>> {
        if self.is_empty() {
            return Err(Error::EmptyBank);
        }
        if !(temperature > 0.0 && temperature.is_finite()) {
            return Err(Error::InvalidInput(format!("temperature must be > 0, got {temperature}")));
        }
        if top_k == Some(0) {
            return Err(Error::InvalidInput("top_k must be ≥ 1".into()));
        }
        if query.len() != self.key_dim {
            return Err(Error::DimensionMismatch(format!(
                "query key dim {} but bank key dim {}",
                query.len(),
                self.key_dim
            )));
        }
        let scale = 1.0 / (temperature * (self.key_dim as f64).sqrt());
        let mut sims: Vec<(usize, f64)> = (0..self.len())
            .map(|i| (i, -squared_distance(query, self.key(i)) * scale))
            .collect();

        if let Some(k) = top_k {
            if k < sims.len() {
                sims.select_nth_unstable_by(k - 1, |a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
                sims.truncate(k);
            }
        }
        sims.sort_by(|a, b| self.canonical_cmp(a, b));

        let max = sims[0].1;
        let exps: Vec<f64> = sims.iter().map(|&(_, s)| (s - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        Ok(sims
            .iter()
            .zip(exps)
            .map(|(&(i, _), e)| (i, e / total))
            .collect())
    }

    fn canonical_cmp(&self, a: &(usize, f64), b: &(usize, f64)) -> Ordering {
        b.1.total_cmp(&a.1)
            .then_with(|| cmp_slices(self.key(a.0), self.key(b.0)))
            .then_with(|| cmp_slices(self.value(a.0), self.value(b.0)))
            .then(a.0.cmp(&b.0))
    }

    /// Affinity-weighted value per query patch.
    pub fn readout(&self, query_keys: &FeatureGrid, temperature: f64, top_k: Option<usize>) -> Result<ValueGrid> {
        self.readout_inner(query_keys, temperature, top_k, None)
    }

    /// As [`readout`](Self::readout), also recording the affinity mass each
    /// entry received.
    pub fn readout_tracked(
        &self,
        query_keys: &FeatureGrid,
        temperature: f64,
        top_k: Option<usize>,
        usage: &mut UsageAccumulator,
    ) -> Result<ValueGrid> {
        if usage.mass.len() != self.len() {
            return Err(Error::DimensionMismatch(format!(
                "usage accumulator sized for {} entries, bank has {}",
                usage.mass.len(),
                self.len()
            )));
        }
        self.readout_inner(query_keys, temperature, top_k, Some(usage))
    }

    fn readout_inner(
        &self,
        query_keys: &FeatureGrid,
        temperature: f64,
        top_k: Option<usize>,
        mut usage: Option<&mut UsageAccumulator>,
    ) -> Result<ValueGrid> {
        let vd = self.value_dim;
        let mut out = Vec::with_capacity(query_keys.len() * vd);
        let mut acc = vec![0.0f64; vd];
        for q in query_keys.patches() {
            let row = self.sparse_affinity(q, temperature, top_k)?;
            acc.iter_mut().for_each(|a| *a = 0.0);
            for &(i, w) in &row {
                for (a, &v) in acc.iter_mut().zip(self.value(i)) {
                    *a += w * f64::from(v);
                }
                if let Some(u) = usage.as_deref_mut() {
                    u.mass[i] += w;
                }
            }
            out.extend(acc.iter().map(|&a| a as f32));
        }
        PatchGrid::new(query_keys.grid_h(), query_keys.grid_w(), vd, query_keys.stride(), out)
    }

    /// Folds readout statistics into the stored usage.
    pub fn merge_usage(&mut self, usage: &UsageAccumulator) -> Result<()> {
        if usage.mass.len() != self.len() {
            return Err(Error::DimensionMismatch(format!(
                "usage accumulator sized for {} entries, bank has {}",
                usage.mass.len(),
                self.len()
            )));
        }
        for (u, m) in self.usage.iter_mut().zip(&usage.mass) {
            *u = (f64::from(*u) + m) as f32;
        }
        Ok(())
    }

    /// Checks every structural invariant.
    pub fn check_invariants(&self) -> Result<()> {
        let n = self.len();
        let fail = |m: String| Err(Error::InvalidInput(format!("bank invariant violated: {m}")));
        if self.keys.len() != n * self.key_dim
            || self.values.len() != n * self.value_dim
            || self.usage.len() != n
            || self.sources.len() != n
        {
            return fail("parallel arrays differ in length".into());
        }
        if self.working_count() > self.config.capacity {
            return fail(format!("working count {} > capacity", self.working_count()));
        }
        if self.longterm_count > self.config.prototype_budget {
            return fail(format!("{} prototypes > budget", self.longterm_count));
        }
        if self.usage.iter().any(|&u| !(u >= 0.0 && u.is_finite())) {
            return fail("negative or non-finite usage".into());
        }
        if self.keys.iter().chain(&self.values).any(|v| !v.is_finite()) {
            return fail("non-finite key or value".into());
        }
        let working = &self.seq[self.longterm_count..];
        if working.windows(2).any(|w| w[0] >= w[1]) {
            return fail("working entries out of insertion order".into());
        }
        if self.seq.iter().any(|&s| s >= self.next_seq) {
            return fail("sequence number from the future".into());
        }
        Ok(())
    }
}

/// Per-entry affinity mass gathered during read-only readouts.
#[derive(Debug, Clone, PartialEq)]
pub struct UsageAccumulator {
    mass: Vec<f64>,
}

impl UsageAccumulator {
    pub fn for_bank(bank: &MemoryBank) -> Self {
        Self {
            mass: vec![0.0; bank.len()],
        }
    }

    pub fn record(&mut self, row: &AffinityRow) {
        for (m, w) in self.mass.iter_mut().zip(&row.weights) {
            *m += w;
        }
    }

    pub fn mass(&self) -> &[f64] {
        &self.mass
    }
}

pub(crate) fn squared_distance(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = f64::from(x) - f64::from(y);
            d * d
        })
        .sum()
}

fn cmp_slices(a: &[f32], b: &[f32]) -> Ordering {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(Ordering::Equal)
}

#[cfg(test)]
mod tests;
