//! Support-set selection over whole-image embeddings.
//!
//! [`EmbeddingIndex::select_knn`] is an exact linear scan ranking by cosine
//! similarity (embeddings are unit-norm), ties broken by insertion order.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::encoder::{dot, GlobalEmbedding};
use crate::error::{Error, Result};
use crate::memory::squared_distance;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    /// Nearest neighbours of the query embedding.
    Knn,
    /// Uniform sample without replacement.
    Random,
    /// The same leading `support_size` pairs of the meta-support set for every query.
    Full,
}

impl Strategy {
    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::Knn => "knn",
            Strategy::Random => "random",
            Strategy::Full => "full",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "knn" => Ok(Strategy::Knn),
            "random" => Ok(Strategy::Random),
            "full" => Ok(Strategy::Full),
            other => Err(Error::Config(format!(
                "unknown strategy `{other}` (expected knn, random or full)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SelectionResult {
    pub query_id: String,
    pub chosen: Vec<String>,
    /// Cosine similarity of each chosen id to the query (knn only).
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub similarities: Vec<f64>,
    pub strategy: Strategy,
    pub n: usize,
}

#[derive(Debug, Clone)]
pub struct EmbeddingIndex {
    embeddings: Vec<GlobalEmbedding>,
    dim: usize,
    by_id: HashMap<String, usize>,
}

impl EmbeddingIndex {
    pub fn new(embeddings: Vec<GlobalEmbedding>) -> Result<Self> {
        let dim = embeddings.first().map_or(0, GlobalEmbedding::dim);
        let mut by_id = HashMap::with_capacity(embeddings.len());
        for (i, e) in embeddings.iter().enumerate() {
            if e.dim() != dim {
                return Err(Error::DimensionMismatch(format!(
                    "embedding `{}` has dim {}, index dim is {dim}",
                    e.id,
                    e.dim()
                )));
            }
            if by_id.insert(e.id.clone(), i).is_some() {
                return Err(Error::InvalidInput(format!("duplicate embedding id `{}`", e.id)));
            }
        }
        Ok(Self {
            embeddings,
            dim,
            by_id,
        })
    }

    pub fn len(&self) -> usize {
        self.embeddings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.embeddings.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, id: &str) -> Option<&GlobalEmbedding> {
        self.by_id.get(id).map(|&i| &self.embeddings[i])
    }

    pub fn embeddings(&self) -> &[GlobalEmbedding] {
        &self.embeddings
    }

    fn check_query(&self, query: &GlobalEmbedding, n: usize) -> Result<()> {
        if n == 0 {
            return Err(Error::InvalidInput("selection size must be ≥ 1".into()));
        }
        if self.is_empty() {
            return Err(Error::InvalidInput("embedding index is empty".into()));
        }
        if query.dim() != self.dim {
            return Err(Error::DimensionMismatch(format!(
                "query embedding dim {} but index dim {}",
                query.dim(),
                self.dim
            )));
        }
        Ok(())
    }

    /// Exact top-`n` by cosine similarity. With `exclude_self`, entries whose
    /// id equals the query id are skipped.
    pub fn select_knn(&self, query: &GlobalEmbedding, n: usize, exclude_self: bool) -> Result<SelectionResult> {
        self.check_query(query, n)?;
        let mut scored: Vec<(usize, f64)> = self
            .embeddings
            .iter()
            .enumerate()
            .filter(|(_, e)| !(exclude_self && e.id == query.id))
            .map(|(i, e)| (i, dot(e.vector(), query.vector())))
            .collect();
        let ranked = top_n(&mut scored, n, |a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        Ok(SelectionResult {
            query_id: query.id.clone(),
            chosen: ranked.iter().map(|&(i, _)| self.embeddings[i].id.clone()).collect(),
            similarities: ranked.iter().map(|&(_, s)| s).collect(),
            strategy: Strategy::Knn,
            n,
        })
    }

    /// Bottom-`n` by squared Euclidean distance. For unit vectors this ranks
    /// identically to [`select_knn`](Self::select_knn) since `‖a − b‖² = 2 − 2·cos`.
    pub fn select_nearest_euclidean(&self, query: &GlobalEmbedding, n: usize) -> Result<Vec<String>> {
        self.check_query(query, n)?;
        let mut scored: Vec<(usize, f64)> = self
            .embeddings
            .iter()
            .enumerate()
            .map(|(i, e)| (i, squared_distance(e.vector(), query.vector())))
            .collect();
        let ranked = top_n(&mut scored, n, |a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        Ok(ranked.iter().map(|&(i, _)| self.embeddings[i].id.clone()).collect())
    }

    /// Uniform seeded sample of `n` ids without replacement.
    pub fn select_random(&self, query_id: &str, n: usize, seed: u64) -> Result<SelectionResult> {
        let ids: Vec<&str> = self.embeddings.iter().map(|e| e.id.as_str()).collect();
        random_subset(&ids, query_id, n, seed)
    }
}

fn top_n<F>(scored: &mut Vec<(usize, f64)>, n: usize, cmp: F) -> &[(usize, f64)]
where
    F: Fn(&(usize, f64), &(usize, f64)) -> std::cmp::Ordering,
{
    if n < scored.len() {
        scored.select_nth_unstable_by(n - 1, &cmp);
        scored.truncate(n);
    }
    scored.sort_by(&cmp);
    scored
}

/// Uniform seeded sample of `min(n, |ids|)` ids without replacement, in draw order.
pub fn random_subset(ids: &[&str], query_id: &str, n: usize, seed: u64) -> Result<SelectionResult> {
    if n == 0 {
        return Err(Error::InvalidInput("selection size must be ≥ 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let amount = n.min(ids.len());
    let chosen = rand::seq::index::sample(&mut rng, ids.len(), amount)
        .into_iter()
        .map(|i| ids[i].to_owned())
        .collect();
    Ok(SelectionResult {
        query_id: query_id.to_owned(),
        chosen,
        similarities: Vec::new(),
        strategy: Strategy::Random,
        n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_index(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> EmbeddingIndex {
        let embeddings = (0..n)
            .map(|i| {
                let v: Vec<f64> = (0..dim).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect();
                GlobalEmbedding::new(format!("e{i}"), &v).unwrap()
            })
            .collect();
        EmbeddingIndex::new(embeddings).unwrap()
    }

    #[test]
    fn self_match_first() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let index = random_index(&mut rng, 30, 8);
        let q = index.embeddings()[17].clone();
        let r = index.select_knn(&q, 1, false).unwrap();
        assert_eq!(r.chosen, vec!["e17"]);
        assert!((r.similarities[0] - 1.0).abs() < 1e-6);
        let r = index.select_knn(&q, 1, true).unwrap();
        assert_ne!(r.chosen, vec!["e17"]);
    }

    #[test]
    fn saturates_at_index_size() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let index = random_index(&mut rng, 6, 4);
        let q = GlobalEmbedding::new("q", &[1.0, 0.0, 0.0, 0.0]).unwrap();
        let r = index.select_knn(&q, 50, false).unwrap();
        assert_eq!(r.chosen.len(), 6);
        assert!(r.similarities.windows(2).all(|w| w[0] >= w[1]));
        assert_eq!(index.select_random("q", 50, 3).unwrap().chosen.len(), 6);
    }

    #[test]
    fn ties_break_by_insertion() {
        let e = |id: &str, v: &[f64]| GlobalEmbedding::new(id, v).unwrap();
        let index = EmbeddingIndex::new(vec![
            e("c", &[0.0, 1.0]),
            e("a", &[1.0, 0.0]),
            e("b", &[1.0, 0.0]),
        ])
        .unwrap();
        let r = index.select_knn(&e("q", &[1.0, 0.0]), 2, false).unwrap();
        assert_eq!(r.chosen, vec!["a", "b"]);
    }

    #[test]
    fn rejects_bad_queries() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let index = random_index(&mut rng, 5, 4);
        let q = GlobalEmbedding::new("q", &[1.0, 0.0]).unwrap();
        assert!(index.select_knn(&q, 1, false).is_err());
        let q = GlobalEmbedding::new("q", &[1.0, 0.0, 0.0, 0.0]).unwrap();
        assert!(index.select_knn(&q, 0, false).is_err());
        let dup = vec![
            GlobalEmbedding::new("x", &[1.0]).unwrap(),
            GlobalEmbedding::new("x", &[1.0]).unwrap(),
        ];
        assert!(EmbeddingIndex::new(dup).is_err());
    }

    #[test]
    fn random_is_seeded() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let index = random_index(&mut rng, 40, 3);
        let a = index.select_random("q", 10, 77).unwrap();
        let b = index.select_random("q", 10, 77).unwrap();
        assert_eq!(a, b);
        let mut ids = a.chosen.clone();
        ids.sort();
        ids.dedup();
        assert_eq!(ids.len(), 10);
        assert_ne!(a.chosen, index.select_random("q", 10, 78).unwrap().chosen);
    }

    #[test]
    fn random_single_draws_are_uniform() {
        let ids = ["a", "b", "c", "d"];
        let mut counts = [0usize; 4];
        for seed in 0..10_000u64 {
            let r = random_subset(&ids, "q", 1, seed).unwrap();
            counts[ids.iter().position(|&i| i == r.chosen[0]).unwrap()] += 1;
        }
        // binomial(10000, 1/4): σ ≈ 43.3
        let sigma = (10_000.0f64 * 0.25 * 0.75).sqrt();
        for c in counts {
            assert!((c as f64 - 2500.0).abs() <= 3.0 * sigma, "{counts:?}");
        }
    }
}
