//! Batch prediction with a shared support set: the memory bank is built
//! once, reused by every query, and spilled to disk when the in-memory cache
//! is full.

use std::sync::Arc;
use std::time::Instant;

use icl_seg::predictor::{BankCache, Predictor, PredictorConfig, Query};
use icl_seg::selection::Strategy;
use icl_seg::synthbench::{generate, SynthSpec};

fn main() -> icl_seg::Result<()> {
    let set = generate(&SynthSpec {
        n_classes: 2,
        pairs_per_class: 40,
        ..Default::default()
    })?;
    let support: Vec<_> = set.classes.iter().flat_map(|c| c.pairs[..10].to_vec()).collect();
    let queries: Vec<Query> = set.classes.iter().flat_map(|c| c.pairs[10..].iter().map(Query::from)).collect();

    let spill = tempfile::tempdir().map_err(|e| icl_seg::Error::InvalidInput(e.to_string()))?;
    let cache = Arc::new(BankCache::new(2).with_spill_dir(spill.path()));
    let shared = Predictor::toy(PredictorConfig {
        strategy: Strategy::Full,
        support_size: 20,
        ..Default::default()
    })?
    .with_cache(Arc::clone(&cache));
    let meta = shared.prepare(&support)?;
    let start = Instant::now();
    let results = shared.predict_batch(&queries, &meta);
    println!(
        "full: {} queries in {:.2?}, cache {:?}",
        results.len(),
        start.elapsed(),
        cache.stats()
    );

    // random supports differ per query; the two-entry cache spills the rest
    let random = shared.with_config(PredictorConfig {
        strategy: Strategy::Random,
        support_size: 3,
        ..shared.config().clone()
    })?;
    let meta = random.prepare(&support)?;
    random.predict_batch(&queries, &meta);
    random.predict_batch(&queries, &meta);
    println!("random: cache {:?}", cache.stats());
    Ok(())
}
