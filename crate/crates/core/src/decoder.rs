//! Turns readout values into per-pixel foreground logits.

use serde::{Deserialize, Serialize};

use crate::encoder::{FeatureGrid, ValueGrid};
use crate::error::{Error, Result};
use crate::image::LogitMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecoderKind {
    LabelTransfer,
    /// A caller-supplied [`MaskDecoder`].
    External,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Upsample {
    Nearest,
    Bilinear,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecoderConfig {
    pub kind: DecoderKind,
    pub upsample: Upsample,
    pub logit_scale: f32,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        Self {
            kind: DecoderKind::LabelTransfer,
            upsample: Upsample::Nearest,
            logit_scale: 8.0,
        }
    }
}

impl DecoderConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.logit_scale.is_finite() && self.logit_scale > 0.0) {
            return Err(Error::Config(format!(
                "logit_scale must be finite and > 0, got {}",
                self.logit_scale
            )));
        }
        Ok(())
    }
}

/// Produces a logit map from a query's readout. Learned decoders also get the
/// query keys.
pub trait MaskDecoder: Send + Sync {
    fn decode(
        &self,
        readout: &ValueGrid,
        query_keys: &FeatureGrid,
        target_h: usize,
        target_w: usize,
    ) -> Result<LogitMap>;
}

/// `logit = scale · (2·value − 1)` on a 1-d foreground-fraction readout.
#[derive(Debug, Clone)]
pub struct LabelTransferDecoder {
    config: DecoderConfig,
}

impl LabelTransferDecoder {
    pub fn new(config: DecoderConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self { config })
    }
}

impl MaskDecoder for LabelTransferDecoder {
    fn decode(&self, readout: &ValueGrid, _: &FeatureGrid, target_h: usize, target_w: usize) -> Result<LogitMap> {
        decode(readout, target_h, target_w, &self.config)
    }
}

pub fn decode(readout: &ValueGrid, target_h: usize, target_w: usize, config: &DecoderConfig) -> Result<LogitMap> {
    config.validate()?;
    if config.kind != DecoderKind::LabelTransfer {
        return Err(Error::Config(
            "external decoders must be supplied as a MaskDecoder implementation".into(),
        ));
    }
    if readout.dim() != 1 {
        return Err(Error::DimensionMismatch(format!(
            "label transfer needs 1-d values, readout has dim {}",
            readout.dim()
        )));
    }
    if let Some(v) = readout.data().iter().find(|v| !(-1e-6..=1.0 + 1e-6).contains(*v)) {
        return Err(Error::InvalidInput(format!(
            "label transfer values must lie in [0, 1], got {v}"
        )));
    }
    if target_h == 0 || target_w == 0 || readout.is_empty() {
        return Err(Error::InvalidInput("empty decode target".into()));
    }
    let scale = f64::from(config.logit_scale);
    let values = upsample(readout, target_h, target_w, config.upsample);
    let logits = values
        .into_iter()
        .map(|v| (scale * (2.0 * v - 1.0)) as f32)
        .collect();
    LogitMap::new(target_h, target_w, logits)
}

/// Pixel → grid coordinate mapping. When the target size is consistent with
/// the grid's stride the patch layout is reproduced exactly; otherwise the
/// grid is stretched proportionally.
fn axis_scale(grid: usize, target: usize, stride: usize) -> f64 {
    if target.div_ceil(stride) == grid {
        stride as f64
    } else {
        target as f64 / grid as f64
    }
}

fn upsample(grid: &ValueGrid, th: usize, tw: usize, mode: Upsample) -> Vec<f64> {
    let (gh, gw) = (grid.grid_h(), grid.grid_w());
    let sy = axis_scale(gh, th, grid.stride());
    let sx = axis_scale(gw, tw, grid.stride());
    let at = |r: usize, c: usize| f64::from(grid.data()[r * gw + c]);
    let mut out = Vec::with_capacity(th * tw);
    match mode {
        Upsample::Nearest => {
            for y in 0..th {
                let r = ((y as f64 / sy) as usize).min(gh - 1);
                for x in 0..tw {
                    let c = ((x as f64 / sx) as usize).min(gw - 1);
                    out.push(at(r, c));
                }
            }
        }
        Upsample::Bilinear => {
            let coord = |p: usize, s: f64, n: usize| {
                let g = ((p as f64 + 0.5) / s - 0.5).clamp(0.0, (n - 1) as f64);
                let lo = g.floor() as usize;
                let hi = (lo + 1).min(n - 1);
                (lo, hi, g - lo as f64)
            };
            for y in 0..th {
                let (r0, r1, fy) = coord(y, sy, gh);
                for x in 0..tw {
                    let (c0, c1, fx) = coord(x, sx, gw);
                    let top = at(r0, c0) * (1.0 - fx) + at(r0, c1) * fx;
                    let bottom = at(r1, c0) * (1.0 - fx) + at(r1, c1) * fx;
                    out.push(top * (1.0 - fy) + bottom * fy);
                }
            }
        }
    }
    out
}
