//! Deterministic synthetic benchmark: each class is a family of colored
//! shapes whose hue lies in a class-specific band, drawn on a textured,
//! low-saturation background.
//!
//! Pixels are generated as 8-bit levels, so writing a set to PNG and reading
//! it back is lossless.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{census, write_binary_datasets, BinaryDataset, ClassMap, SemanticSample, CENSUS_FILE};
use crate::error::{Error, Result};
use crate::image::{BinaryMask, Image, LabeledPair};
use crate::io;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapeFamily {
    Rect,
    Circle,
}

/// Integer shape parameters; rasterization has no anti-aliasing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Shape {
    /// Rows `y0..y0+h`, columns `x0..x0+w`.
    Rect { y0: usize, x0: usize, h: usize, w: usize },
    /// Pixels with `(y−cy)² + (x−cx)² ≤ r²`.
    Circle { cy: i64, cx: i64, r: i64 },
}

impl Shape {
    pub fn contains(&self, y: usize, x: usize) -> bool {
        match *self {
            Shape::Rect { y0, x0, h, w } => y >= y0 && y < y0 + h && x >= x0 && x < x0 + w,
            Shape::Circle { cy, cx, r } => {
                let (dy, dx) = (y as i64 - cy, x as i64 - cx);
                dy * dy + dx * dx <= r * r
            }
        }
    }

    pub fn rasterize(&self, height: usize, width: usize) -> BinaryMask {
        BinaryMask::from_fn(height, width, |y, x| self.contains(y, x))
    }
}

/// Hue interval in `[0, 1)`, half-open.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HueBand {
    pub lo: f64,
    pub hi: f64,
}

impl HueBand {
    fn overlaps(&self, other: &HueBand) -> bool {
        self.lo < other.hi && other.lo < self.hi
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub n_classes: usize,
    pub pairs_per_class: usize,
    pub image_size: usize,
    /// One band per class; empty spreads `n_classes` bands evenly over the hue circle.
    pub hue_bands: Vec<HueBand>,
    /// One family per class; empty alternates rect, circle, ...
    pub shapes: Vec<ShapeFamily>,
    /// Amplitude of uniform per-pixel noise.
    pub noise: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            n_classes: 4,
            pairs_per_class: 20,
            image_size: 48,
            hue_bands: Vec::new(),
            shapes: Vec::new(),
            noise: 0.06,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn bands(&self) -> Vec<HueBand> {
        if !self.hue_bands.is_empty() {
            return self.hue_bands.clone();
        }
        let n = self.n_classes as f64;
        (0..self.n_classes)
            .map(|i| HueBand {
                lo: (i as f64 + 0.25) / n,
                hi: (i as f64 + 0.75) / n,
            })
            .collect()
    }

    pub fn families(&self) -> Vec<ShapeFamily> {
        if !self.shapes.is_empty() {
            return self.shapes.clone();
        }
        (0..self.n_classes)
            .map(|i| if i % 2 == 0 { ShapeFamily::Rect } else { ShapeFamily::Circle })
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_classes == 0 || self.pairs_per_class == 0 {
            return Err(Error::Config("n_classes and pairs_per_class must be ≥ 1".into()));
        }
        if self.image_size < 16 {
            return Err(Error::Config(format!("image_size must be ≥ 16, got {}", self.image_size)));
        }
        if !(0.0..=0.5).contains(&self.noise) {
            return Err(Error::Config(format!("noise must be in [0, 0.5], got {}", self.noise)));
        }
        let bands = self.bands();
        if bands.len() != self.n_classes {
            return Err(Error::Config(format!(
                "{} hue bands for {} classes",
                bands.len(),
                self.n_classes
            )));
        }
        if !self.shapes.is_empty() && self.shapes.len() != self.n_classes {
            return Err(Error::Config(format!(
                "{} shape families for {} classes",
                self.shapes.len(),
                self.n_classes
            )));
        }
        for (i, b) in bands.iter().enumerate() {
            if !(0.0 <= b.lo && b.lo < b.hi && b.hi <= 1.0) {
                return Err(Error::Config(format!("hue band {i} [{}, {}) is not within [0, 1)", b.lo, b.hi)));
            }
            if let Some(j) = bands[..i].iter().position(|o| o.overlaps(b)) {
                return Err(Error::Config(format!("hue bands {j} and {i} overlap")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthClass {
    pub class_id: u32,
    pub class_name: String,
    pub pairs: Vec<LabeledPair>,
    pub shapes: Vec<Shape>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSet {
    pub spec: SynthSpec,
    pub classes: Vec<SynthClass>,
}

impl SynthSet {
    pub fn binary_datasets(&self) -> Vec<BinaryDataset> {
        self.classes
            .iter()
            .map(|c| BinaryDataset {
                class_id: c.class_id,
                class_name: c.class_name.clone(),
                pairs: c.pairs.clone(),
            })
            .collect()
    }

    pub fn len(&self) -> usize {
        self.classes.iter().map(|c| c.pairs.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Class ids start at 1 (0 is reserved for unlabeled pixels).
pub fn class_id(index: usize) -> u32 {
    index as u32 + 1
}

fn pair_rng(seed: u64, class: usize, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((class as u64) << 32) | index as u64);
    rng
}

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [f64; 3] {
    let h6 = (h.rem_euclid(1.0)) * 6.0;
    let sector = h6.floor() as u32 % 6;
    let f = h6 - h6.floor();
    let (p, q, t) = (v * (1.0 - s), v * (1.0 - s * f), v * (1.0 - s * (1.0 - f)));
    match sector {
        0 => [v, t, p],
        1 => [q, v, p],
        2 => [p, v, t],
        3 => [p, q, v],
        4 => [t, p, v],
        _ => [v, p, q],
    }
}

fn random_shape(rng: &mut ChaCha8Rng, family: ShapeFamily, size: usize) -> Shape {
    match family {
        ShapeFamily::Rect => {
            let h = rng.gen_range(size / 4..=size / 2);
            let w = rng.gen_range(size / 4..=size / 2);
            Shape::Rect {
                y0: rng.gen_range(0..=size - h),
                x0: rng.gen_range(0..=size - w),
                h,
                w,
            }
        }
        ShapeFamily::Circle => {
            let r = rng.gen_range(size / 8..=size / 4) as i64;
            let s = size as i64;
            Shape::Circle {
                cy: rng.gen_range(r..s - r),
                cx: rng.gen_range(r..s - r),
                r,
            }
        }
    }
}

fn to_level(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Renders one image: background gray with a diagonal stripe texture, the
/// shape filled with a hue from `band`, plus uniform noise.
fn render(rng: &mut ChaCha8Rng, mask: &BinaryMask, band: HueBand, noise: f64) -> Image {
    let (h, w) = (mask.height(), mask.width());
    let gray = rng.gen_range(0.40..0.47);
    let tint: [f64; 3] = std::array::from_fn(|_| rng.gen_range(-0.02..0.02));
    let period = rng.gen_range(3..9usize);
    let contrast = rng.gen_range(0.01..0.04);
    let hue = rng.gen_range(band.lo..band.hi);
    let fg = hsv_to_rgb(hue, rng.gen_range(0.6..0.95), rng.gen_range(0.6..0.95));
    let mut bytes = Vec::with_capacity(h * w * 3);
    for y in 0..h {
        for x in 0..w {
            let base = if mask.get(y, x) {
                fg
            } else {
                let stripe = if (x + y) / period % 2 == 0 { contrast } else { -contrast };
                std::array::from_fn(|c| gray + tint[c] + stripe)
            };
            for b in base {
                let n = if noise > 0.0 { rng.gen_range(-noise..=noise) } else { 0.0 };
                bytes.push(to_level(b + n));
            }
        }
    }
    Image::from_u8(h, w, 3, &bytes).expect("sizes match")
}

/// Exactly `n_classes × pairs_per_class` pairs; pair ids are
/// `c<class_id>_<index>`.
pub fn generate(spec: &SynthSpec) -> Result<SynthSet> {
    spec.validate()?;
    let bands = spec.bands();
    let families = spec.families();
    let size = spec.image_size;
    let classes = (0..spec.n_classes)
        .map(|ci| {
            let generated: Vec<(LabeledPair, Shape)> = (0..spec.pairs_per_class)
                .into_par_iter()
                .map(|i| {
                    let mut rng = pair_rng(spec.seed, ci, i);
                    let shape = random_shape(&mut rng, families[ci], size);
                    let mask = shape.rasterize(size, size);
                    let image = render(&mut rng, &mask, bands[ci], spec.noise);
                    let id = format!("c{}_{i:04}", class_id(ci));
                    Ok((LabeledPair::new(id, image, mask)?, shape))
                })
                .collect::<Result<_>>()?;
            let (pairs, shapes) = generated.into_iter().unzip();
            Ok(SynthClass {
                class_id: class_id(ci),
                class_name: format!("synth_{}", class_id(ci)),
                pairs,
                shapes,
            })
        })
        .collect::<Result<_>>()?;
    Ok(SynthSet {
        spec: spec.clone(),
        classes,
    })
}

/// A pooled meta-support set shared by every class plus per-class eval
/// queries, the setting in which support selection matters.
#[derive(Debug, Clone, PartialEq)]
pub struct PooledBench {
    pub meta_support: Vec<LabeledPair>,
    /// `(class_id, class_name, queries)`.
    pub eval: Vec<(u32, String, Vec<LabeledPair>)>,
}

impl PooledBench {
    /// One [`ClassSplit`](crate::dataset::ClassSplit) per class, each with the
    /// pooled meta-support set.
    pub fn class_splits(&self) -> Vec<crate::dataset::ClassSplit> {
        self.eval
            .iter()
            .map(|(class_id, name, queries)| crate::dataset::ClassSplit {
                class_id: *class_id,
                class_name: name.clone(),
                split: crate::dataset::DatasetSplit {
                    meta_support: self.meta_support.clone(),
                    eval: queries.clone(),
                    seed: 0,
                    eval_fraction: 0.0,
                },
            })
            .collect()
    }
}

/// `meta_per_class` pairs of every class go to the pool; `eval_total`
/// queries are spread over classes as evenly as possible, earlier classes
/// taking the remainder.
pub fn pooled_benchmark(spec: &SynthSpec, meta_per_class: usize, eval_total: usize) -> Result<PooledBench> {
    let n = spec.n_classes.max(1);
    let per_class_eval = |ci: usize| eval_total / n + usize::from(ci < eval_total % n);
    let spec = SynthSpec {
        pairs_per_class: meta_per_class + per_class_eval(0),
        ..spec.clone()
    };
    let set = generate(&spec)?;
    let mut meta_support = Vec::with_capacity(meta_per_class * n);
    let mut eval = Vec::with_capacity(n);
    for (ci, class) in set.classes.into_iter().enumerate() {
        let mut pairs = class.pairs;
        let queries = pairs.split_off(meta_per_class);
        meta_support.extend(pairs);
        eval.push((
            class.class_id,
            class.class_name,
            queries.into_iter().take(per_class_eval(ci)).collect(),
        ));
    }
    Ok(PooledBench { meta_support, eval })
}

/// Writes the set in the binary dataset layout with a census file.
pub fn write_binary_layout(root: &Path, set: &SynthSet) -> Result<()> {
    let datasets = set.binary_datasets();
    write_binary_datasets(root, &datasets)?;
    io::write_json(&root.join(CENSUS_FILE), &census(&datasets, set.len(), 1))
}

/// Semantic images holding several shapes of different classes each, for
/// exercising binary dataset construction. Later shapes paint over earlier
/// ones.
pub fn generate_semantic(n_images: usize, n_classes: usize, image_size: usize, seed: u64) -> Result<Vec<SemanticSample>> {
    let spec = SynthSpec {
        n_classes,
        pairs_per_class: 1,
        image_size,
        seed,
        ..SynthSpec::default()
    };
    spec.validate()?;
    let bands = spec.bands();
    let families = spec.families();
    (0..n_images)
        .map(|i| {
            let mut rng = pair_rng(seed, usize::MAX >> 32, i);
            let mut labels = vec![0u32; image_size * image_size];
            let mut colors = vec![None; image_size * image_size];
            let k = rng.gen_range(1..=n_classes.min(3));
            let chosen = rand::seq::index::sample(&mut rng, n_classes, k);
            for ci in chosen.iter() {
                let shape = random_shape(&mut rng, families[ci], image_size);
                let band = bands[ci];
                let rgb = hsv_to_rgb(rng.gen_range(band.lo..band.hi), 0.8, 0.8);
                for y in 0..image_size {
                    for x in 0..image_size {
                        if shape.contains(y, x) {
                            labels[y * image_size + x] = class_id(ci);
                            colors[y * image_size + x] = Some(rgb);
                        }
                    }
                }
            }
            let bytes: Vec<u8> = colors
                .iter()
                .flat_map(|c| c.unwrap_or([0.5; 3]).map(to_level))
                .collect();
            let image = Image::from_u8(image_size, image_size, 3, &bytes)?;
            let class_map = ClassMap {
                height: image_size,
                width: image_size,
                data: labels,
            };
            SemanticSample::new(format!("img_{i:04}"), image, class_map)
        })
        .collect()
}

/// Writes `images/<id>.png` and 8-bit gray `annotations/<id>.png`.
pub fn write_semantic_layout(root: &Path, samples: &[SemanticSample]) -> Result<()> {
    for s in samples {
        io::write_image(&root.join("images").join(format!("{}.png", s.id)), &s.image)?;
        let levels = s
            .class_map
            .data
            .iter()
            .map(|&c| u8::try_from(c).map_err(|_| Error::InvalidInput(format!("class id {c} does not fit 8 bits"))))
            .collect::<Result<Vec<u8>>>()?;
        let png = io::encode_png(s.class_map.width, s.class_map.height, png::ColorType::Grayscale, &levels)?;
        io::write_atomic(&root.join("annotations").join(format!("{}.png", s.id)), &png)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::{GlobalEmbedder, ToyEncoder};

    fn small(n_classes: usize, pairs: usize) -> SynthSpec {
        SynthSpec {
            n_classes,
            pairs_per_class: pairs,
            image_size: 64,
            ..Default::default()
        }
    }

    #[test]
    fn counts_and_nonempty_masks() {
        let set = generate(&small(2, 4)).unwrap();
        assert_eq!(set.len(), 8);
        for c in &set.classes {
            assert_eq!(c.pairs.len(), 4);
            assert!(c.pairs.iter().all(|p| p.mask.foreground_count() > 0));
        }
    }

    #[test]
    fn deterministic() {
        let a = generate(&small(3, 5)).unwrap();
        let b = generate(&small(3, 5)).unwrap();
        assert_eq!(a, b);
        let c = generate(&SynthSpec { seed: 1, ..small(3, 5) }).unwrap();
        assert_ne!(a.classes[0].pairs[0].image, c.classes[0].pairs[0].image);
    }

    /// Independent rasterizer: scans each row for the covered span using
    /// integer square roots rather than testing every pixel.
    fn rasterize_by_spans(shape: &Shape, size: usize) -> Vec<bool> {
        let mut out = vec![false; size * size];
        match *shape {
            Shape::Rect { y0, x0, h, w } => {
                for y in y0..(y0 + h).min(size) {
                    for x in x0..(x0 + w).min(size) {
                        out[y * size + x] = true;
                    }
                }
            }
            Shape::Circle { cy, cx, r } => {
                for y in 0..size as i64 {
                    let dy = y - cy;
                    let rem = r * r - dy * dy;
                    if rem < 0 {
                        continue;
                    }
                    let mut half = (rem as f64).sqrt() as i64;
                    while half * half > rem {
                        half -= 1;
                    }
                    while (half + 1) * (half + 1) <= rem {
                        half += 1;
                    }
                    for x in (cx - half).max(0)..=(cx + half).min(size as i64 - 1) {
                        out[y as usize * size + x as usize] = true;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn masks_match_span_rasterizer() {
        let set = generate(&small(4, 10)).unwrap();
        for c in &set.classes {
            for (pair, shape) in c.pairs.iter().zip(&c.shapes) {
                assert_eq!(pair.mask.data(), rasterize_by_spans(shape, 64).as_slice(), "{}", pair.id);
            }
        }
    }

    #[test]
    fn overlapping_bands_rejected() {
        let spec = SynthSpec {
            n_classes: 2,
            hue_bands: vec![HueBand { lo: 0.0, hi: 0.4 }, HueBand { lo: 0.3, hi: 0.6 }],
            ..Default::default()
        };
        assert!(matches!(generate(&spec), Err(Error::Config(_))));
        let spec = SynthSpec {
            n_classes: 2,
            hue_bands: vec![HueBand { lo: 0.0, hi: 0.3 }, HueBand { lo: 0.3, hi: 0.6 }],
            ..Default::default()
        };
        assert!(generate(&spec).is_ok());
    }

    #[test]
    fn within_class_similarity_exceeds_cross_class() {
        for (n_classes, seed) in [(2, 0), (4, 1), (6, 2)] {
            let set = generate(&SynthSpec {
                seed,
                ..small(n_classes, 8)
            })
            .unwrap();
            let enc = ToyEncoder::default();
            let emb: Vec<Vec<_>> = set
                .classes
                .iter()
                .map(|c| c.pairs.iter().map(|p| enc.embed_global(&p.id, &p.image).unwrap()).collect())
                .collect();
            let (mut within, mut nw, mut cross, mut nc) = (0.0, 0, 0.0, 0);
            for (a, ea) in emb.iter().enumerate() {
                for (b, eb) in emb.iter().enumerate() {
                    for (i, x) in ea.iter().enumerate() {
                        for (j, y) in eb.iter().enumerate() {
                            if a == b && i == j {
                                continue;
                            }
                            if a == b {
                                within += x.cosine(y);
                                nw += 1;
                            } else {
                                cross += x.cosine(y);
                                nc += 1;
                            }
                        }
                    }
                }
            }
            assert!(within / nw as f64 > cross / nc as f64, "{n_classes} classes");
        }
    }

    #[test]
    fn pooled_split_counts() {
        let bench = pooled_benchmark(&small(4, 1), 5, 10).unwrap();
        assert_eq!(bench.meta_support.len(), 20);
        let counts: Vec<usize> = bench.eval.iter().map(|(_, _, q)| q.len()).collect();
        assert_eq!(counts, vec![3, 3, 2, 2]);
        let splits = bench.class_splits();
        assert_eq!(splits.len(), 4);
        assert!(splits.iter().all(|s| s.split.meta_support.len() == 20));
    }

    #[test]
    fn layout_round_trip_is_lossless() {
        let dir = tempfile::tempdir().unwrap();
        let set = generate(&small(2, 3)).unwrap();
        write_binary_layout(dir.path(), &set).unwrap();
        let loaded = crate::dataset::load_binary_datasets(dir.path()).unwrap();
        assert_eq!(loaded, set.binary_datasets());
    }

    #[test]
    fn semantic_samples_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let samples = generate_semantic(4, 3, 32, 5).unwrap();
        write_semantic_layout(dir.path(), &samples).unwrap();
        let loaded = crate::dataset::load_semantic_dir(dir.path()).unwrap();
        assert_eq!(loaded, samples);
    }
}
