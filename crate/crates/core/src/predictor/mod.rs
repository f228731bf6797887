//! End-to-end in-context segmentation: choose a support set from the
//! meta-support pool, populate a memory bank from it, read the query out
//! against the bank and decode a mask.
//!
//! Two aggregation modes are provided. `memory` puts the whole support set in
//! one bank. `logit_avg` decodes the query against each support pair's own
//! single-pair bank and averages the logit maps.

mod cache;

pub use cache::{BankCache, CacheKey, CacheStats, DEFAULT_CACHE_ENTRIES};

use std::collections::HashMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::{Arc, Mutex};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::decoder::{DecoderConfig, DecoderKind, LabelTransferDecoder, MaskDecoder};
use crate::encoder::{GlobalEmbedder, GlobalEmbedding, PatchEncoder, ToyEncoder};
use crate::error::{Error, Result};
use crate::image::{mask_from_logits, BinaryMask, Image, LabeledPair, LogitMap};
use crate::io::{write_atomic, write_json};
use crate::memory::{MemoryBank, MemoryConfig, UsageAccumulator};
use crate::selection::{random_subset, EmbeddingIndex, SelectionResult, Strategy};
use cache::KeyHasher;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    Memory,
    LogitAvg,
}

impl Aggregation {
    pub fn as_str(self) -> &'static str {
        match self {
            Aggregation::Memory => "memory",
            Aggregation::LogitAvg => "logit_avg",
        }
    }
}

impl fmt::Display for Aggregation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Aggregation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "memory" => Ok(Aggregation::Memory),
            "logit_avg" => Ok(Aggregation::LogitAvg),
            other => Err(Error::Config(format!(
                "unknown aggregation `{other}` (expected memory or logit_avg)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PredictorConfig {
    pub support_size: usize,
    pub strategy: Strategy,
    pub aggregation: Aggregation,
    /// Softmax temperature of the affinity.
    pub temperature: f64,
    /// Number of memory entries kept per query patch; 0 keeps all.
    pub top_k: usize,
    /// Foreground iff `sigmoid(logit) > threshold`.
    pub threshold: f64,
    pub decoder: DecoderConfig,
    pub memory: MemoryConfig,
    pub seed: u64,
    /// Skip meta-support pairs whose id equals the query id (knn and random).
    pub exclude_self: bool,
}

impl Default for PredictorConfig {
    fn default() -> Self {
        Self {
            support_size: 10,
            strategy: Strategy::Knn,
            aggregation: Aggregation::Memory,
            temperature: 0.01,
            top_k: 30,
            threshold: 0.5,
            decoder: DecoderConfig::default(),
            memory: MemoryConfig::default(),
            seed: 0,
            exclude_self: true,
        }
    }
}

impl PredictorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.support_size == 0 {
            return Err(Error::Config("support_size must be ≥ 1".into()));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::Config(format!("temperature must be > 0, got {}", self.temperature)));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::Config(format!("threshold must be in (0, 1), got {}", self.threshold)));
        }
        self.decoder.validate()?;
        self.memory.validate()
    }

    pub fn top_k(&self) -> Option<usize> {
        (self.top_k > 0).then_some(self.top_k)
    }
}

/// An image to segment. The id keys embedding lookups and self-exclusion.
#[derive(Debug, Clone, PartialEq)]
pub struct Query {
    pub id: String,
    pub image: Image,
}

impl Query {
    pub fn new(id: impl Into<String>, image: Image) -> Self {
        Self { id: id.into(), image }
    }
}

impl From<&LabeledPair> for Query {
    fn from(p: &LabeledPair) -> Self {
        Self::new(p.id.clone(), p.image.clone())
    }
}

/// Whole-image embeddings for knn selection: computed by an embedder
/// (memoized by id) or looked up in a loaded store.
pub struct Embeddings {
    source: EmbeddingSource,
    memo: Mutex<HashMap<String, GlobalEmbedding>>,
}

enum EmbeddingSource {
    None,
    Embedder(Arc<dyn GlobalEmbedder>),
    Store(HashMap<String, GlobalEmbedding>),
}

impl Embeddings {
    pub fn none() -> Self {
        Self {
            source: EmbeddingSource::None,
            memo: Mutex::default(),
        }
    }

    pub fn embedder(embedder: Arc<dyn GlobalEmbedder>) -> Self {
        Self {
            source: EmbeddingSource::Embedder(embedder),
            memo: Mutex::default(),
        }
    }

    pub fn toy() -> Self {
        Self::embedder(Arc::new(ToyEncoder::default()))
    }

    pub fn store(embeddings: Vec<GlobalEmbedding>) -> Self {
        Self {
            source: EmbeddingSource::Store(embeddings.into_iter().map(|e| (e.id.clone(), e)).collect()),
            memo: Mutex::default(),
        }
    }

    pub fn is_available(&self) -> bool {
        !matches!(self.source, EmbeddingSource::None)
    }

    pub fn embed(&self, id: &str, image: &Image) -> Result<GlobalEmbedding> {
        match &self.source {
            EmbeddingSource::None => Err(Error::Config(
                "knn selection needs image embeddings: supply an embedding store or enable the toy embedder".into(),
            )),
            EmbeddingSource::Store(map) => map.get(id).cloned().ok_or_else(|| Error::MissingEmbedding(id.to_owned())),
            EmbeddingSource::Embedder(embedder) => {
                if let Some(e) = self.memo.lock().unwrap().get(id) {
                    return Ok(e.clone());
                }
                let e = embedder.embed_global(id, image)?;
                self.memo.lock().unwrap().insert(id.to_owned(), e.clone());
                Ok(e)
            }
        }
    }
}

/// A meta-support pool prepared for repeated queries.
pub struct MetaSupport {
    pairs: Vec<LabeledPair>,
    by_id: HashMap<String, usize>,
    index: Option<EmbeddingIndex>,
}

impl MetaSupport {
    pub fn pairs(&self) -> &[LabeledPair] {
        &self.pairs
    }

    pub fn get(&self, id: &str) -> Option<&LabeledPair> {
        self.by_id.get(id).map(|&i| &self.pairs[i])
    }

    pub fn index(&self) -> Option<&EmbeddingIndex> {
        self.index.as_ref()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub mask: BinaryMask,
    pub logits: LogitMap,
    pub selection: SelectionResult,
}

pub struct Predictor {
    encoder: Arc<dyn PatchEncoder>,
    decoder: Arc<dyn MaskDecoder>,
    embeddings: Arc<Embeddings>,
    config: PredictorConfig,
    cache: Arc<BankCache>,
}

impl Predictor {
    pub fn new(encoder: Arc<dyn PatchEncoder>, config: PredictorConfig) -> Result<Self> {
        config.validate()?;
        let decoder: Arc<dyn MaskDecoder> = match config.decoder.kind {
            DecoderKind::LabelTransfer => Arc::new(LabelTransferDecoder::new(config.decoder.clone())?),
            DecoderKind::External => Arc::new(MissingDecoder),
        };
        Ok(Self {
            encoder,
            decoder,
            embeddings: Arc::new(Embeddings::none()),
            config,
            cache: Arc::new(BankCache::default()),
        })
    }

    /// Toy encoder for keys, values and (for knn) embeddings.
    pub fn toy(config: PredictorConfig) -> Result<Self> {
        Ok(Self::new(Arc::new(ToyEncoder::default()), config)?.with_embeddings(Arc::new(Embeddings::toy())))
    }

    pub fn with_decoder(mut self, decoder: Arc<dyn MaskDecoder>) -> Self {
        self.decoder = decoder;
        self
    }

    pub fn with_embeddings(mut self, embeddings: Arc<Embeddings>) -> Self {
        self.embeddings = embeddings;
        self
    }

    pub fn with_cache(mut self, cache: Arc<BankCache>) -> Self {
        self.cache = cache;
        self
    }

    /// A predictor sharing this one's encoder, embeddings, cache and (for
    /// external decoders) decoder, with a different configuration.
    pub fn with_config(&self, config: PredictorConfig) -> Result<Self> {
        config.validate()?;
        let decoder: Arc<dyn MaskDecoder> = match config.decoder.kind {
            DecoderKind::LabelTransfer => Arc::new(LabelTransferDecoder::new(config.decoder.clone())?),
            DecoderKind::External => Arc::clone(&self.decoder),
        };
        Ok(Self {
            encoder: Arc::clone(&self.encoder),
            decoder,
            embeddings: Arc::clone(&self.embeddings),
            config,
            cache: Arc::clone(&self.cache),
        })
    }

    pub fn shared_cache(&self) -> Arc<BankCache> {
        Arc::clone(&self.cache)
    }

    pub fn config(&self) -> &PredictorConfig {
        &self.config
    }

    pub fn cache(&self) -> &BankCache {
        &self.cache
    }

    pub fn encoder(&self) -> &Arc<dyn PatchEncoder> {
        &self.encoder
    }

    pub fn embeddings(&self) -> &Arc<Embeddings> {
        &self.embeddings
    }

    /// Indexes a meta-support pool; embeddings are computed only for knn.
    pub fn prepare(&self, pairs: &[LabeledPair]) -> Result<MetaSupport> {
        if pairs.is_empty() {
            return Err(Error::InvalidInput("meta-support set is empty".into()));
        }
        let mut by_id = HashMap::with_capacity(pairs.len());
        for (i, p) in pairs.iter().enumerate() {
            if by_id.insert(p.id.clone(), i).is_some() {
                return Err(Error::InvalidInput(format!("duplicate meta-support id `{}`", p.id)));
            }
        }
        let index = if self.config.strategy == Strategy::Knn {
            if !self.embeddings.is_available() {
                return Err(Error::Config(
                    "strategy knn needs image embeddings: supply an embedding store or enable the toy embedder".into(),
                ));
            }
            let embeddings = pairs
                .iter()
                .map(|p| self.embeddings.embed(&p.id, &p.image))
                .collect::<Result<Vec<_>>>()?;
            Some(EmbeddingIndex::new(embeddings)?)
        } else {
            None
        };
        Ok(MetaSupport {
            pairs: pairs.to_vec(),
            by_id,
            index,
        })
    }

    pub fn select(&self, query: &Query, meta: &MetaSupport) -> Result<SelectionResult> {
        let n = self.config.support_size;
        match self.config.strategy {
            Strategy::Knn => {
                let index = meta
                    .index
                    .as_ref()
                    .ok_or_else(|| Error::Config("meta-support was prepared without an embedding index".into()))?;
                let q = self.embeddings.embed(&query.id, &query.image)?;
                index.select_knn(&q, n, self.config.exclude_self)
            }
            Strategy::Random => {
                let ids: Vec<&str> = meta
                    .pairs
                    .iter()
                    .map(|p| p.id.as_str())
                    .filter(|id| !(self.config.exclude_self && *id == query.id))
                    .collect();
                random_subset(&ids, &query.id, n, query_seed(self.config.seed, &query.id))
            }
            Strategy::Full => Ok(SelectionResult {
                query_id: query.id.clone(),
                chosen: meta.pairs.iter().take(n).map(|p| p.id.clone()).collect(),
                similarities: Vec::new(),
                strategy: Strategy::Full,
                n,
            }),
        }
    }

    pub fn bank_key(&self, support_ids: &[&str]) -> CacheKey {
        let mut h = KeyHasher::new("icl-seg/bank/v1");
        h.str(&self.encoder.fingerprint())
            .u64(self.config.memory.capacity as u64)
            .u64(self.config.memory.prototype_budget as u64)
            .u64(self.config.temperature.to_bits())
            .u64(self.config.top_k as u64)
            .u64(support_ids.len() as u64);
        for id in support_ids {
            h.str(id);
        }
        h.finish()
    }

    /// Populates a fresh bank with `support` in order. When the support set
    /// overflows working memory, each pair is first read out against the
    /// bank so consolidation can rank entries by usage.
    pub fn build_bank(&self, support: &[&LabeledPair]) -> Result<MemoryBank> {
        let mut bank = MemoryBank::new(self.config.memory)?;
        let grids = support
            .iter()
            .map(|p| Ok((self.encoder.encode_keys(&p.image)?, self.encoder.encode_values(&p.image, &p.mask)?)))
            .collect::<Result<Vec<_>>>()?;
        let total: usize = grids.iter().map(|(k, _)| k.len()).sum();
        let track_usage = total > self.config.memory.capacity;
        for (pair, (keys, values)) in support.iter().zip(&grids) {
            if track_usage && !bank.is_empty() {
                let mut acc = UsageAccumulator::for_bank(&bank);
                bank.readout_tracked(keys, self.config.temperature, self.config.top_k(), &mut acc)?;
                bank.merge_usage(&acc)?;
            }
            bank.add_support(keys, values, &pair.id)?;
        }
        Ok(bank)
    }

    fn cached_bank(&self, support: &[&LabeledPair]) -> Result<Arc<MemoryBank>> {
        let ids: Vec<&str> = support.iter().map(|p| p.id.as_str()).collect();
        self.cache.get_or_build(self.bank_key(&ids), || self.build_bank(support))
    }

    /// Reads the query out against `bank` and decodes logits at query resolution.
    pub fn predict_with_bank(&self, query: &Image, bank: &MemoryBank) -> Result<LogitMap> {
        let keys = self.encoder.encode_keys(query)?;
        let readout = bank.readout(&keys, self.config.temperature, self.config.top_k())?;
        self.decoder.decode(&readout, &keys, query.height(), query.width())
    }

    fn resolve<'m>(&self, selection: &SelectionResult, meta: &'m MetaSupport) -> Result<Vec<&'m LabeledPair>> {
        selection
            .chosen
            .iter()
            .map(|id| {
                meta.get(id)
                    .ok_or_else(|| Error::InvalidInput(format!("selected id `{id}` is not in the meta-support set")))
            })
            .collect()
    }

    pub fn predict(&self, query: &Query, meta: &MetaSupport) -> Result<Prediction> {
        let selection = self.select(query, meta)?;
        let support = self.resolve(&selection, meta)?;
        if support.is_empty() {
            return Err(Error::InvalidInput(format!(
                "no support pairs available for query `{}`",
                query.id
            )));
        }
        let logits = match self.config.aggregation {
            Aggregation::Memory => {
                let bank = self.cached_bank(&support)?;
                self.predict_with_bank(&query.image, &bank)?
            }
            Aggregation::LogitAvg => {
                let maps = support
                    .iter()
                    .map(|p| {
                        let bank = self.cached_bank(std::slice::from_ref(p))?;
                        self.predict_with_bank(&query.image, &bank)
                    })
                    .collect::<Result<Vec<_>>>()?;
                average_logits(&maps)?
            }
        };
        let mask = mask_from_logits(&logits, self.config.threshold);
        Ok(Prediction {
            mask,
            logits,
            selection,
        })
    }

    /// Predicts every query, fanning out over the current rayon pool. With
    /// the `full` strategy the shared bank is built before the fan-out so all
    /// queries reuse it. Results are in query order and identical to
    /// sequential [`predict`](Self::predict) calls.
    pub fn predict_batch(&self, queries: &[Query], meta: &MetaSupport) -> Vec<Result<Prediction>> {
        if self.config.strategy == Strategy::Full {
            if let Some(first) = queries.first() {
                if let Err(e) = self.warm_shared(first, meta) {
                    log::debug!("shared bank warm-up failed: {e}");
                }
            }
        }
        queries.par_iter().map(|q| self.predict(q, meta)).collect()
    }

    fn warm_shared(&self, query: &Query, meta: &MetaSupport) -> Result<()> {
        let selection = self.select(query, meta)?;
        let support = self.resolve(&selection, meta)?;
        match self.config.aggregation {
            Aggregation::Memory => {
                self.cached_bank(&support)?;
            }
            Aggregation::LogitAvg => {
                for p in support {
                    self.cached_bank(std::slice::from_ref(&p))?;
                }
            }
        }
        Ok(())
    }
}

struct MissingDecoder;

impl MaskDecoder for MissingDecoder {
    fn decode(
        &self,
        _: &crate::encoder::ValueGrid,
        _: &crate::encoder::FeatureGrid,
        _: usize,
        _: usize,
    ) -> Result<LogitMap> {
        Err(Error::Config(
            "decoder kind `external` requires Predictor::with_decoder".into(),
        ))
    }
}

/// Element-wise arithmetic mean of equally sized logit maps.
///
/// Each pixel's values are summed in sorted order, so the result does not
/// depend on the order of `maps`, and `k` copies of one map average back to
/// that map exactly.
pub fn average_logits(maps: &[LogitMap]) -> Result<LogitMap> {
    let first = maps
        .first()
        .ok_or_else(|| Error::InvalidInput("no logit maps to average".into()))?;
    let (h, w) = (first.height(), first.width());
    if let Some(m) = maps.iter().find(|m| m.height() != h || m.width() != w) {
        return Err(Error::DimensionMismatch(format!(
            "logit maps are {h}x{w} and {}x{}",
            m.height(),
            m.width()
        )));
    }
    let k = maps.len() as f64;
    let mut column = vec![0.0f32; maps.len()];
    let data = (0..h * w)
        .map(|i| {
            for (slot, m) in column.iter_mut().zip(maps) {
                *slot = m.data()[i];
            }
            column.sort_by(f32::total_cmp);
            let sum: f64 = column.iter().map(|&v| f64::from(v)).sum();
            (sum / k) as f32
        })
        .collect();
    LogitMap::new(h, w, data)
}

/// Per-query seed derived from the run seed and the query id (FNV-1a then a
/// splitmix64 finalizer); stable across platforms and runs.
pub fn query_seed(seed: u64, query_id: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in query_id.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    let mut z = h ^ seed.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub const LOGIT_MAGIC: &[u8; 4] = b"LGT1";

/// Raw logit dump: magic `LGT1`, little-endian `u32` height and width, then
/// `height × width` little-endian `f32`; sidecar `<file>.json` carries
/// `{"query_id", "height", "width", "threshold"}`.
pub fn write_logit_dump(path: &Path, query_id: &str, logits: &LogitMap, threshold: f64) -> Result<()> {
    let mut bytes = Vec::with_capacity(12 + logits.data().len() * 4);
    bytes.extend_from_slice(LOGIT_MAGIC);
    bytes.extend_from_slice(&(logits.height() as u32).to_le_bytes());
    bytes.extend_from_slice(&(logits.width() as u32).to_le_bytes());
    for v in logits.data() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    write_atomic(path, &bytes)?;
    let mut sidecar = path.as_os_str().to_owned();
    sidecar.push(".json");
    write_json(
        Path::new(&sidecar),
        &serde_json::json!({
            "query_id": query_id,
            "height": logits.height(),
            "width": logits.width(),
            "threshold": threshold,
        }),
    )
}
