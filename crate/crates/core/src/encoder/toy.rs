use serde::{Deserialize, Serialize};

use super::{FeatureGrid, GlobalEmbedder, GlobalEmbedding, PatchEncoder, PatchGrid, ValueGrid};
use crate::error::{Error, Result};
use crate::image::{BinaryMask, Image};

const HIST_BINS: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    /// Patch side length in pixels.
    pub stride: usize,
    /// Scale applied to the normalized patch-centre coordinates in key vectors.
    pub positional_weight: f32,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            stride: 8,
            positional_weight: 0.25,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.stride == 0 {
            return Err(Error::Config("encoder stride must be ≥ 1".into()));
        }
        if !self.positional_weight.is_finite() || self.positional_weight < 0.0 {
            return Err(Error::Config("positional_weight must be finite and ≥ 0".into()));
        }
        Ok(())
    }
}

/// Hand-crafted patch statistics encoder.
///
/// Keys per patch: channel means, channel standard deviations, mean absolute
/// horizontal and vertical differences (within the patch, averaged over
/// channels), and the weighted normalized patch centre `(x, y)`.
/// `dim = 2·channels + 4`.
///
/// Values per patch: the foreground fraction (`dim = 1`).
///
/// Global embedding: 8-bin per-channel histograms over three channels (gray
/// images are replicated) followed by whole-image mean absolute horizontal and
/// vertical differences, L2-normalized. `dim = 26`.
#[derive(Debug, Clone, Default)]
pub struct ToyEncoder {
    config: EncoderConfig,
}

impl ToyEncoder {
    pub fn new(config: EncoderConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self { config })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn key_dim(channels: usize) -> usize {
        2 * channels + 4
    }

    fn patch_bounds(&self, len: usize, index: usize) -> (usize, usize) {
        let start = index * self.config.stride;
        (start, (start + self.config.stride).min(len))
    }
}

impl PatchEncoder for ToyEncoder {
    fn encode_keys(&self, image: &Image) -> Result<FeatureGrid> {
        let (h, w, c) = (image.height(), image.width(), image.channels());
        let stride = self.config.stride;
        let (gh, gw) = PatchGrid::shape_for(h, w, stride);
        let dim = Self::key_dim(c);
        let pos_weight = f64::from(self.config.positional_weight);
        let mut data = Vec::with_capacity(gh * gw * dim);
        let mut feat = vec![0.0f64; dim];

        for py in 0..gh {
            let (y0, y1) = self.patch_bounds(h, py);
            for px in 0..gw {
                let (x0, x1) = self.patch_bounds(w, px);
                let n = ((y1 - y0) * (x1 - x0)) as f64;
                feat.iter_mut().for_each(|f| *f = 0.0);

                for ch in 0..c {
                    let mut sum = 0.0;
                    for y in y0..y1 {
                        for x in x0..x1 {
                            sum += f64::from(image.get(y, x, ch));
                        }
                    }
                    let mean = sum / n;
                    let mut var = 0.0;
                    for y in y0..y1 {
                        for x in x0..x1 {
                            let d = f64::from(image.get(y, x, ch)) - mean;
                            var += d * d;
                        }
                    }
                    feat[ch] = mean;
                    feat[c + ch] = (var / n).sqrt();
                }

                let (mut gx, mut nx, mut gy, mut ny) = (0.0, 0usize, 0.0, 0usize);
                for y in y0..y1 {
                    for x in x0..x1 {
                        for ch in 0..c {
                            let v = f64::from(image.get(y, x, ch));
                            if x + 1 < x1 {
                                gx += (f64::from(image.get(y, x + 1, ch)) - v).abs();
                                nx += 1;
                            }
                            if y + 1 < y1 {
                                gy += (f64::from(image.get(y + 1, x, ch)) - v).abs();
                                ny += 1;
                            }
                        }
                    }
                }
                feat[2 * c] = if nx > 0 { gx / nx as f64 } else { 0.0 };
                feat[2 * c + 1] = if ny > 0 { gy / ny as f64 } else { 0.0 };
                feat[2 * c + 2] = pos_weight * ((x0 + x1) as f64 / 2.0) / w as f64;
                feat[2 * c + 3] = pos_weight * ((y0 + y1) as f64 / 2.0) / h as f64;

                data.extend(feat.iter().map(|&v| v as f32));
            }
        }
        PatchGrid::new(gh, gw, dim, stride, data)
    }

    fn encode_values(&self, image: &Image, mask: &BinaryMask) -> Result<ValueGrid> {
        if image.height() != mask.height() || image.width() != mask.width() {
            return Err(Error::DimensionMismatch(format!(
                "image is {}x{} but mask is {}x{}",
                image.height(),
                image.width(),
                mask.height(),
                mask.width()
            )));
        }
        let (h, w) = (mask.height(), mask.width());
        let stride = self.config.stride;
        let (gh, gw) = PatchGrid::shape_for(h, w, stride);
        let mut data = Vec::with_capacity(gh * gw);
        for py in 0..gh {
            let (y0, y1) = self.patch_bounds(h, py);
            for px in 0..gw {
                let (x0, x1) = self.patch_bounds(w, px);
                let mut fg = 0usize;
                for y in y0..y1 {
                    for x in x0..x1 {
                        fg += usize::from(mask.get(y, x));
                    }
                }
                data.push((fg as f64 / ((y1 - y0) * (x1 - x0)) as f64) as f32);
            }
        }
        PatchGrid::new(gh, gw, 1, stride, data)
    }

    fn fingerprint(&self) -> String {
        format!(
            "toy/v1/stride={}/pos={:08x}",
            self.config.stride,
            self.config.positional_weight.to_bits()
        )
    }
}

impl GlobalEmbedder for ToyEncoder {
    fn embed_global(&self, id: &str, image: &Image) -> Result<GlobalEmbedding> {
        let (h, w, c) = (image.height(), image.width(), image.channels());
        let n = (h * w) as f64;
        let mut raw = vec![0.0f64; 3 * HIST_BINS + 2];
        for y in 0..h {
            for x in 0..w {
                for slot in 0..3 {
                    let v = image.get(y, x, if c == 1 { 0 } else { slot });
                    let bin = ((v * HIST_BINS as f32) as usize).min(HIST_BINS - 1);
                    raw[slot * HIST_BINS + bin] += 1.0 / n;
                }
            }
        }
        let (mut gx, mut nx, mut gy, mut ny) = (0.0, 0usize, 0.0, 0usize);
        for y in 0..h {
            for x in 0..w {
                for ch in 0..c {
                    let v = f64::from(image.get(y, x, ch));
                    if x + 1 < w {
                        gx += (f64::from(image.get(y, x + 1, ch)) - v).abs();
                        nx += 1;
                    }
                    if y + 1 < h {
                        gy += (f64::from(image.get(y + 1, x, ch)) - v).abs();
                        ny += 1;
                    }
                }
            }
        }
        raw[3 * HIST_BINS] = if nx > 0 { gx / nx as f64 } else { 0.0 };
        raw[3 * HIST_BINS + 1] = if ny > 0 { gy / ny as f64 } else { 0.0 };
        GlobalEmbedding::new(id, &raw)
    }
}
