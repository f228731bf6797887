//! Export whole-image embeddings to an `EMB1` store, load them back and use
//! them for nearest-neighbour support selection. Any external embedder can
//! feed the predictor this way.

use std::sync::Arc;

use icl_seg::encoder::{load_embedding_store, write_embedding_store, GlobalEmbedder, ToyEncoder};
use icl_seg::predictor::{Embeddings, Predictor, PredictorConfig, Query};
use icl_seg::synthbench::{generate, SynthSpec};

fn main() -> icl_seg::Result<()> {
    let set = generate(&SynthSpec {
        pairs_per_class: 6,
        ..Default::default()
    })?;
    let pairs: Vec<_> = set.classes.iter().flat_map(|c| c.pairs.clone()).collect();

    let embedder = ToyEncoder::default();
    let embeddings = pairs
        .iter()
        .map(|p| embedder.embed_global(&p.id, &p.image))
        .collect::<icl_seg::Result<Vec<_>>>()?;
    let dir = tempfile::tempdir().map_err(|e| icl_seg::Error::InvalidInput(e.to_string()))?;
    let path = dir.path().join("pairs.emb");
    write_embedding_store(&path, &embeddings)?;
    let loaded = load_embedding_store(&path)?;
    println!("stored {} embeddings of dim {}", loaded.len(), loaded[0].dim());

    let predictor = Predictor::toy(PredictorConfig {
        support_size: 4,
        ..Default::default()
    })?
    .with_embeddings(Arc::new(Embeddings::store(loaded)));
    let meta = predictor.prepare(&pairs)?;
    for query in pairs.iter().step_by(6) {
        let selection = predictor.select(&Query::from(query), &meta)?;
        let sims: Vec<String> = selection.similarities.iter().map(|s| format!("{s:.4}")).collect();
        println!("{} → {} ({})", query.id, selection.chosen.join(" "), sims.join(" "));
    }
    Ok(())
}
