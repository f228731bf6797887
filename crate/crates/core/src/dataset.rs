//! Semantic → per-class binary dataset construction, seeded splits and
//! fixed-size episode sampling, plus the on-disk layouts.
//!
//! Semantic layout: `<root>/images/<id>.png` and `<root>/annotations/<id>.png`
//! (8-bit indexed or gray, value = class id, 0 = unlabeled).
//!
//! Binary layout: `<root>/<class_id>/<id>.png` and
//! `<root>/<class_id>/masks/<id>.png` (255 = foreground), plus an optional
//! `<root>/<class_id>/split.json` manifest and `<root>/census.json`.

use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{BinaryMask, Image, LabeledPair};
use crate::io;

pub const EPISODE_LEN: usize = 16;
pub const DEFAULT_MIN_PIXELS: usize = 16;
pub const DEFAULT_EVAL_FRACTION: f64 = 0.2;
pub const SPLIT_MANIFEST: &str = "split.json";
pub const CENSUS_FILE: &str = "census.json";

/// Per-pixel class indices, 0 = unlabeled.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassMap {
    pub height: usize,
    pub width: usize,
    pub data: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SemanticSample {
    pub id: String,
    pub image: Image,
    pub class_map: ClassMap,
}

impl SemanticSample {
    pub fn new(id: impl Into<String>, image: Image, class_map: ClassMap) -> Result<Self> {
        let sample = Self {
            id: id.into(),
            image,
            class_map,
        };
        sample.validate()?;
        Ok(sample)
    }

    fn validate(&self) -> Result<()> {
        let cm = &self.class_map;
        if cm.data.len() != cm.height * cm.width {
            return Err(Error::Ingest {
                id: self.id.clone(),
                message: format!("class map has {} values for {}x{}", cm.data.len(), cm.height, cm.width),
            });
        }
        if cm.height != self.image.height() || cm.width != self.image.width() {
            return Err(Error::Ingest {
                id: self.id.clone(),
                message: format!(
                    "annotation is {}x{} but image is {}x{}",
                    cm.height,
                    cm.width,
                    self.image.height(),
                    self.image.width()
                ),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BinaryDataset {
    pub class_id: u32,
    pub class_name: String,
    pub pairs: Vec<LabeledPair>,
}

pub fn default_class_name(class_id: u32) -> String {
    format!("class_{class_id}")
}

/// One binary dataset per class present with at least `min_pixels` pixels in
/// some sample; pairs keep the sample id and sample order. Class 0 is never
/// emitted. Output is sorted by class id.
pub fn construct_binary_datasets(samples: &[SemanticSample], min_pixels: usize) -> Result<Vec<BinaryDataset>> {
    if samples.is_empty() {
        return Err(Error::InvalidInput("no samples found".into()));
    }
    if min_pixels == 0 {
        return Err(Error::InvalidInput("min_pixels must be ≥ 1".into()));
    }
    let per_sample: Vec<Vec<(u32, LabeledPair)>> = samples
        .par_iter()
        .map(|s| {
            s.validate()?;
            let mut counts: BTreeMap<u32, usize> = BTreeMap::new();
            for &c in &s.class_map.data {
                if c != 0 {
                    *counts.entry(c).or_default() += 1;
                }
            }
            counts
                .into_iter()
                .filter(|&(_, n)| n >= min_pixels)
                .map(|(c, _)| {
                    let mask = BinaryMask::new(
                        s.class_map.height,
                        s.class_map.width,
                        s.class_map.data.iter().map(|&v| v == c).collect(),
                    )?;
                    Ok((c, LabeledPair::new(s.id.clone(), s.image.clone(), mask)?))
                })
                .collect()
        })
        .collect::<Result<_>>()?;

    let mut by_class: BTreeMap<u32, Vec<LabeledPair>> = BTreeMap::new();
    for pairs in per_sample {
        for (c, pair) in pairs {
            by_class.entry(c).or_default().push(pair);
        }
    }
    Ok(by_class
        .into_iter()
        .map(|(class_id, pairs)| BinaryDataset {
            class_id,
            class_name: default_class_name(class_id),
            pairs,
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit {
    pub meta_support: Vec<LabeledPair>,
    pub eval: Vec<LabeledPair>,
    pub seed: u64,
    pub eval_fraction: f64,
}

impl DatasetSplit {
    pub fn manifest(&self) -> SplitManifest {
        SplitManifest {
            seed: self.seed,
            eval_fraction: self.eval_fraction,
            meta_support: self.meta_support.iter().map(|p| p.id.clone()).collect(),
            eval: self.eval.iter().map(|p| p.id.clone()).collect(),
        }
    }
}

/// A class's split, the unit evaluated by the harness.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassSplit {
    pub class_id: u32,
    pub class_name: String,
    pub split: DatasetSplit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub seed: u64,
    pub eval_fraction: f64,
    pub meta_support: Vec<String>,
    pub eval: Vec<String>,
}

impl SplitManifest {
    /// Rebuilds a split from `pairs`; every id must be present exactly once.
    pub fn apply(&self, pairs: &[LabeledPair]) -> Result<DatasetSplit> {
        let by_id: BTreeMap<&str, &LabeledPair> = pairs.iter().map(|p| (p.id.as_str(), p)).collect();
        let pick = |ids: &[String]| -> Result<Vec<LabeledPair>> {
            ids.iter()
                .map(|id| {
                    by_id
                        .get(id.as_str())
                        .map(|p| (*p).clone())
                        .ok_or_else(|| Error::InvalidInput(format!("split manifest names unknown pair `{id}`")))
                })
                .collect()
        };
        let split = DatasetSplit {
            meta_support: pick(&self.meta_support)?,
            eval: pick(&self.eval)?,
            seed: self.seed,
            eval_fraction: self.eval_fraction,
        };
        let mut seen = HashSet::new();
        for id in self.meta_support.iter().chain(&self.eval) {
            if !seen.insert(id) {
                return Err(Error::InvalidInput(format!("split manifest lists `{id}` twice")));
            }
        }
        Ok(split)
    }
}

/// Seeded partition into meta-support and eval sets.
///
/// `|eval| = round(eval_fraction · n)` clamped to `1..=n−1`; both sides keep
/// the input order.
pub fn split_dataset(pairs: &[LabeledPair], eval_fraction: f64, seed: u64) -> Result<DatasetSplit> {
    if pairs.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "need at least 2 pairs to split, got {}",
            pairs.len()
        )));
    }
    if !(eval_fraction > 0.0 && eval_fraction < 1.0) {
        return Err(Error::InvalidInput(format!(
            "eval_fraction must be in (0, 1), got {eval_fraction}"
        )));
    }
    let mut seen = HashSet::new();
    if let Some(dup) = pairs.iter().find(|p| !seen.insert(p.id.as_str())) {
        return Err(Error::InvalidInput(format!("duplicate pair id `{}`", dup.id)));
    }
    let n = pairs.len();
    let n_eval = ((eval_fraction * n as f64).round() as usize).clamp(1, n - 1);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut is_eval = vec![false; n];
    for &i in &order[..n_eval] {
        is_eval[i] = true;
    }
    let (eval, meta): (Vec<_>, Vec<_>) = pairs.iter().zip(&is_eval).partition(|(_, &e)| e);
    Ok(DatasetSplit {
        meta_support: meta.into_iter().map(|(p, _)| p.clone()).collect(),
        eval: eval.into_iter().map(|(p, _)| p.clone()).collect(),
        seed,
        eval_fraction,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub class_id: u32,
    pub pairs: Vec<LabeledPair>,
}

/// Draws [`EPISODE_LEN`] pairs from one class's meta-support set: a shuffled
/// draw without replacement when enough pairs exist, otherwise with
/// replacement.
pub fn sample_episode(class_id: u32, meta_support: &[LabeledPair], seed: u64) -> Result<Episode> {
    if meta_support.is_empty() {
        return Err(Error::InvalidInput(format!(
            "class {class_id} has an empty meta-support set"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pairs = if meta_support.len() >= EPISODE_LEN {
        let mut order: Vec<usize> = (0..meta_support.len()).collect();
        order.shuffle(&mut rng);
        order[..EPISODE_LEN].iter().map(|&i| meta_support[i].clone()).collect()
    } else {
        (0..EPISODE_LEN)
            .map(|_| meta_support[rng.gen_range(0..meta_support.len())].clone())
            .collect()
    };
    Ok(Episode { class_id, pairs })
}

fn png_stems(dir: &Path) -> Result<Vec<String>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut ids = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let path = entry.path();
        if path.is_file() && path.extension().is_some_and(|e| e == "png") {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                ids.push(stem.to_owned());
            }
        }
    }
    ids.sort();
    Ok(ids)
}

/// Loads every `images/<id>.png` with its `annotations/<id>.png`, sorted by id.
pub fn load_semantic_dir(root: &Path) -> Result<Vec<SemanticSample>> {
    let images = root.join("images");
    let annotations = root.join("annotations");
    if !images.is_dir() {
        return Err(Error::InvalidInput(format!(
            "no samples found: {} is not a directory",
            images.display()
        )));
    }
    let ids = png_stems(&images)?;
    ids.par_iter()
        .map(|id| {
            let image = io::read_image(&images.join(format!("{id}.png")))?;
            let ann_path = annotations.join(format!("{id}.png"));
            if !ann_path.is_file() {
                return Err(Error::Ingest {
                    id: id.clone(),
                    message: format!("missing annotation {}", ann_path.display()),
                });
            }
            let (height, width, data) = io::read_index_map(&ann_path)?;
            SemanticSample::new(id.clone(), image, ClassMap { height, width, data })
        })
        .collect()
}

pub fn class_dir(root: &Path, class_id: u32) -> PathBuf {
    root.join(class_id.to_string())
}

/// Writes datasets in the binary layout. Existing files are replaced atomically.
pub fn write_binary_datasets(root: &Path, datasets: &[BinaryDataset]) -> Result<()> {
    datasets.par_iter().try_for_each(|ds| {
        let dir = class_dir(root, ds.class_id);
        ds.pairs.iter().try_for_each(|p| {
            io::write_image(&dir.join(format!("{}.png", p.id)), &p.image)?;
            io::write_mask(&dir.join("masks").join(format!("{}.png", p.id)), &p.mask)
        })
    })
}

/// Loads every `<root>/<class_id>/` directory of the binary layout, sorted by
/// class id. Class names come from `census.json` when present.
pub fn load_binary_datasets(root: &Path) -> Result<Vec<BinaryDataset>> {
    let entries = std::fs::read_dir(root).map_err(|e| Error::io(root, e))?;
    let mut class_ids = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(root, e))?;
        if entry.path().is_dir() {
            if let Some(id) = entry.file_name().to_str().and_then(|s| s.parse::<u32>().ok()) {
                class_ids.push(id);
            }
        }
    }
    class_ids.sort_unstable();
    let names: BTreeMap<u32, String> = match root.join(CENSUS_FILE) {
        p if p.is_file() => io::read_json::<Census>(&p)?
            .classes
            .into_iter()
            .map(|c| (c.class_id, c.class_name))
            .collect(),
        _ => BTreeMap::new(),
    };
    class_ids
        .into_iter()
        .map(|class_id| {
            let dir = class_dir(root, class_id);
            let pairs = png_stems(&dir)?
                .par_iter()
                .map(|id| {
                    let image = io::read_image(&dir.join(format!("{id}.png")))?;
                    let mask = io::read_mask(&dir.join("masks").join(format!("{id}.png")))?;
                    LabeledPair::new(id.clone(), image, mask)
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(BinaryDataset {
                class_id,
                class_name: names.get(&class_id).cloned().unwrap_or_else(|| default_class_name(class_id)),
                pairs,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Census {
    pub min_pixels: usize,
    pub samples: usize,
    pub total_pairs: usize,
    pub classes: Vec<ClassCensus>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCensus {
    pub class_id: u32,
    pub class_name: String,
    pub pairs: usize,
}

pub fn census(datasets: &[BinaryDataset], samples: usize, min_pixels: usize) -> Census {
    Census {
        min_pixels,
        samples,
        total_pairs: datasets.iter().map(|d| d.pairs.len()).sum(),
        classes: datasets
            .iter()
            .map(|d| ClassCensus {
                class_id: d.class_id,
                class_name: d.class_name.clone(),
                pairs: d.pairs.len(),
            })
            .collect(),
    }
}

pub fn write_split_manifest(path: &Path, split: &DatasetSplit) -> Result<()> {
    io::write_json(path, &split.manifest())
}

pub fn read_split_manifest(path: &Path) -> Result<SplitManifest> {
    io::read_json(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pair(id: &str) -> LabeledPair {
        LabeledPair::new(id, Image::filled(2, 2, 1, 0.0).unwrap(), BinaryMask::empty(2, 2)).unwrap()
    }

    fn pairs(n: usize) -> Vec<LabeledPair> {
        (0..n).map(|i| pair(&format!("p{i:03}"))).collect()
    }

    fn sample(id: &str, h: usize, w: usize, classes: Vec<u32>) -> SemanticSample {
        SemanticSample::new(
            id,
            Image::filled(h, w, 1, 0.5).unwrap(),
            ClassMap {
                height: h,
                width: w,
                data: classes,
            },
        )
        .unwrap()
    }

    #[test]
    fn one_sample_two_classes() {
        let mut data = vec![1u32; 32];
        data.extend(vec![2u32; 32]);
        let out = construct_binary_datasets(&[sample("s", 8, 8, data)], 16).unwrap();
        assert_eq!(out.len(), 2);
        assert!(out.iter().all(|d| d.pairs.len() == 1));
        assert_eq!(out[0].pairs[0].mask.foreground_count(), 32);
    }

    #[test]
    fn background_and_small_classes_are_skipped() {
        let mut data = vec![0u32; 60];
        data.extend([3, 3, 3, 7]);
        let out = construct_binary_datasets(&[sample("s", 8, 8, data)], 3).unwrap();
        assert_eq!(out.iter().map(|d| d.class_id).collect::<Vec<_>>(), vec![3]);
    }

    #[test]
    fn construction_errors() {
        assert!(construct_binary_datasets(&[], 1).is_err());
        let bad = SemanticSample {
            id: "broken".into(),
            image: Image::filled(4, 4, 1, 0.0).unwrap(),
            class_map: ClassMap {
                height: 4,
                width: 3,
                data: vec![1; 12],
            },
        };
        let err = construct_binary_datasets(&[bad], 1).unwrap_err();
        assert!(err.to_string().contains("broken"));
    }

    #[test]
    fn split_cardinality_and_determinism() {
        let ps = pairs(10);
        let a = split_dataset(&ps, 0.2, 7).unwrap();
        assert_eq!((a.eval.len(), a.meta_support.len()), (2, 8));
        assert_eq!(a, split_dataset(&ps, 0.2, 7).unwrap());
        assert_eq!(split_dataset(&pairs(3), 0.01, 1).unwrap().eval.len(), 1);
        assert_eq!(split_dataset(&pairs(3), 0.99, 1).unwrap().meta_support.len(), 1);
        assert!(split_dataset(&pairs(1), 0.5, 1).is_err());
        assert!(split_dataset(&ps, 0.0, 1).is_err());
        assert!(split_dataset(&ps, 1.0, 1).is_err());
    }

    #[test]
    fn split_is_a_partition_for_many_seeds() {
        let ps = pairs(100);
        for seed in 1..=50 {
            let s = split_dataset(&ps, 0.3, seed).unwrap();
            assert_eq!(s.eval.len(), 30);
            let eval: HashSet<_> = s.eval.iter().map(|p| p.id.clone()).collect();
            let meta: HashSet<_> = s.meta_support.iter().map(|p| p.id.clone()).collect();
            assert!(eval.is_disjoint(&meta));
            let all: HashSet<_> = ps.iter().map(|p| p.id.clone()).collect();
            assert_eq!(&eval | &meta, all);
        }
    }

    #[test]
    fn manifest_round_trip() {
        let ps = pairs(12);
        let split = split_dataset(&ps, 0.25, 3).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(SPLIT_MANIFEST);
        write_split_manifest(&path, &split).unwrap();
        let json: serde_json::Value = serde_json::from_slice(&std::fs::read(&path).unwrap()).unwrap();
        assert_eq!(json["seed"], 3);
        assert_eq!(json["eval"].as_array().unwrap().len(), 3);
        let back = read_split_manifest(&path).unwrap().apply(&ps).unwrap();
        assert_eq!(back, split);
    }

    #[test]
    fn episodes() {
        let ps = pairs(16);
        let ep = sample_episode(1, &ps, 5).unwrap();
        assert_eq!(ep.pairs.len(), 16);
        let mut ids: Vec<_> = ep.pairs.iter().map(|p| p.id.clone()).collect();
        ids.sort();
        assert_eq!(ids, ps.iter().map(|p| p.id.clone()).collect::<Vec<_>>());

        let small = pairs(5);
        let ep = sample_episode(1, &small, 5).unwrap();
        assert_eq!(ep.pairs.len(), 16);
        assert!(ep.pairs.iter().all(|p| small.iter().any(|s| s.id == p.id)));

        let many = pairs(100);
        let a = sample_episode(2, &many, 9).unwrap();
        let b = sample_episode(2, &many, 9).unwrap();
        assert_eq!(a, b);
        let distinct: HashSet<_> = a.pairs.iter().map(|p| &p.id).collect();
        assert_eq!(distinct.len(), 16);

        assert!(sample_episode(3, &[], 0).is_err());
    }

    proptest! {
        #[test]
        fn emitted_masks_are_class_indicators(
            maps in prop::collection::vec(prop::collection::vec(0u32..5, 36), 1..6),
            min_pixels in 1usize..8,
        ) {
            let samples: Vec<_> = maps
                .iter()
                .enumerate()
                .map(|(i, m)| sample(&format!("s{i}"), 6, 6, m.clone()))
                .collect();
            let out = construct_binary_datasets(&samples, min_pixels).unwrap();
            for ds in &out {
                for p in &ds.pairs {
                    let s = samples.iter().find(|s| s.id == p.id).unwrap();
                    prop_assert!(p.mask.foreground_count() >= min_pixels);
                    for (m, &c) in p.mask.data().iter().zip(&s.class_map.data) {
                        prop_assert_eq!(*m, c == ds.class_id);
                    }
                }
            }
        }
    }
}
