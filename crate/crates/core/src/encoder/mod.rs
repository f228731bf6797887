//! Feature extraction roles: per-patch keys, mask-conditioned values and
//! whole-image embeddings.
//!
//! The [`ToyEncoder`] is a deterministic hand-crafted implementation of all
//! three roles; learned encoders plug in through [`PatchEncoder`] and
//! [`GlobalEmbedder`], or by exporting embeddings to the store format in
//! [`store`].

mod store;
mod toy;

pub use store::{load_embedding_store, write_embedding_store, EMBEDDING_MAGIC};
pub use toy::{EncoderConfig, ToyEncoder};

use crate::error::{Error, Result};
use crate::image::{BinaryMask, Image};

/// Row-major `grid_h × grid_w × dim` features, one vector per `stride × stride` patch.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchGrid {
    grid_h: usize,
    grid_w: usize,
    dim: usize,
    stride: usize,
    data: Vec<f32>,
}

/// Key features of an image.
pub type FeatureGrid = PatchGrid;
/// Value features of an image + mask, or the readout of a query.
pub type ValueGrid = PatchGrid;

impl PatchGrid {
    pub fn new(grid_h: usize, grid_w: usize, dim: usize, stride: usize, data: Vec<f32>) -> Result<Self> {
        if dim == 0 || stride == 0 {
            return Err(Error::InvalidInput("grid dim and stride must be positive".into()));
        }
        if data.len() != grid_h * grid_w * dim {
            return Err(Error::DimensionMismatch(format!(
                "grid data has {} values, expected {grid_h}x{grid_w}x{dim}",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite grid feature".into()));
        }
        Ok(Self {
            grid_h,
            grid_w,
            dim,
            stride,
            data,
        })
    }

    /// Grid shape for an image of `height × width` at `stride`.
    pub fn shape_for(height: usize, width: usize, stride: usize) -> (usize, usize) {
        (height.div_ceil(stride), width.div_ceil(stride))
    }

    pub fn grid_h(&self) -> usize {
        self.grid_h
    }

    pub fn grid_w(&self) -> usize {
        self.grid_w
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn stride(&self) -> usize {
        self.stride
    }

    pub fn len(&self) -> usize {
        self.grid_h * self.grid_w
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    /// Feature vector of patch `index` (row-major).
    pub fn patch(&self, index: usize) -> &[f32] {
        &self.data[index * self.dim..(index + 1) * self.dim]
    }

    pub fn patches(&self) -> impl Iterator<Item = &[f32]> {
        self.data.chunks_exact(self.dim)
    }

    pub fn same_layout(&self, other: &PatchGrid) -> bool {
        self.grid_h == other.grid_h && self.grid_w == other.grid_w && self.stride == other.stride
    }
}

/// Unit-norm whole-image embedding used for support selection.
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalEmbedding {
    pub id: String,
    vector: Vec<f32>,
}

impl GlobalEmbedding {
    /// L2-normalizes `raw`. Fails on empty, zero or non-finite vectors.
    pub fn new(id: impl Into<String>, raw: &[f64]) -> Result<Self> {
        let id = id.into();
        if raw.is_empty() {
            return Err(Error::InvalidInput(format!("embedding `{id}` is empty")));
        }
        if raw.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!("embedding `{id}` has a non-finite value")));
        }
        let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(Error::InvalidInput(format!("embedding `{id}` has zero norm")));
        }
        Ok(Self {
            id,
            vector: raw.iter().map(|v| (v / norm) as f32).collect(),
        })
    }

    pub fn from_f32(id: impl Into<String>, raw: &[f32]) -> Result<Self> {
        let raw: Vec<f64> = raw.iter().map(|&v| f64::from(v)).collect();
        Self::new(id, &raw)
    }

    pub fn vector(&self) -> &[f32] {
        &self.vector
    }

    pub fn dim(&self) -> usize {
        self.vector.len()
    }

    pub fn cosine(&self, other: &GlobalEmbedding) -> f64 {
        dot(&self.vector, &other.vector)
    }
}

pub(crate) fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| f64::from(x) * f64::from(y))
        .sum()
}

/// Produces key and value grids for memory population and readout.
pub trait PatchEncoder: Send + Sync {
    fn encode_keys(&self, image: &Image) -> Result<FeatureGrid>;

    fn encode_values(&self, image: &Image, mask: &BinaryMask) -> Result<ValueGrid>;

    /// Stable description of everything that influences the encoder's output.
    /// Part of the memory cache key.
    fn fingerprint(&self) -> String;
}

/// Produces whole-image embeddings.
pub trait GlobalEmbedder: Send + Sync {
    fn embed_global(&self, id: &str, image: &Image) -> Result<GlobalEmbedding>;
}
