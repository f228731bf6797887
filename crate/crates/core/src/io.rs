//! PNG and atomic file helpers.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use png::{BitDepth, ColorType, Transformations};

use crate::error::{Error, Result};
use crate::image::{BinaryMask, Image};

fn png_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Png {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

struct RawPng {
    height: usize,
    width: usize,
    color: ColorType,
    depth: BitDepth,
    line_size: usize,
    buf: Vec<u8>,
}

fn decode(path: &Path, transformations: Transformations) -> Result<RawPng> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut decoder = png::Decoder::new(BufReader::new(file));
    decoder.set_transformations(transformations);
    let mut reader = decoder.read_info().map_err(|e| png_err(path, e))?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| png_err(path, "image too large"))?;
    let mut buf = vec![0; size];
    let info = reader.next_frame(&mut buf).map_err(|e| png_err(path, e))?;
    buf.truncate(info.line_size * info.height as usize);
    Ok(RawPng {
        height: info.height as usize,
        width: info.width as usize,
        color: info.color_type,
        depth: info.bit_depth,
        line_size: info.line_size,
        buf,
    })
}

/// Reads an 8-bit (or 16-bit, stripped) gray/RGB PNG into a 1- or 3-channel image.
/// Palettes are expanded and alpha is dropped.
pub fn read_image(path: &Path) -> Result<Image> {
    let raw = decode(path, Transformations::EXPAND | Transformations::STRIP_16)?;
    let (src_channels, keep) = match raw.color {
        ColorType::Grayscale => (1, 1),
        ColorType::GrayscaleAlpha => (2, 1),
        ColorType::Rgb => (3, 3),
        ColorType::Rgba => (4, 3),
        ColorType::Indexed => return Err(png_err(path, "palette was not expanded")),
    };
    let mut bytes = Vec::with_capacity(raw.height * raw.width * keep);
    for row in raw.buf.chunks(raw.line_size) {
        for px in row[..raw.width * src_channels].chunks(src_channels) {
            bytes.extend_from_slice(&px[..keep]);
        }
    }
    Image::from_u8(raw.height, raw.width, keep, &bytes).map_err(|e| png_err(path, e))
}

/// Reads raw per-pixel sample values of a single-channel PNG without palette
/// expansion, so indexed annotations yield their class indices.
pub fn read_index_map(path: &Path) -> Result<(usize, usize, Vec<u32>)> {
    let raw = decode(path, Transformations::IDENTITY)?;
    if !matches!(raw.color, ColorType::Grayscale | ColorType::Indexed) {
        return Err(png_err(
            path,
            format!("annotation must be gray or indexed, got {:?}", raw.color),
        ));
    }
    let bits = match raw.depth {
        BitDepth::One => 1,
        BitDepth::Two => 2,
        BitDepth::Four => 4,
        BitDepth::Eight => 8,
        BitDepth::Sixteen => 16,
    };
    let mut values = Vec::with_capacity(raw.height * raw.width);
    for row in raw.buf.chunks(raw.line_size) {
        for x in 0..raw.width {
            let v = match bits {
                16 => u32::from(u16::from_be_bytes([row[2 * x], row[2 * x + 1]])),
                8 => u32::from(row[x]),
                b => {
                    let per_byte = 8 / b;
                    let byte = row[x / per_byte];
                    let shift = 8 - b * (x % per_byte + 1);
                    u32::from((byte >> shift) & ((1u8 << b) - 1))
                }
            };
            values.push(v);
        }
    }
    Ok((raw.height, raw.width, values))
}

/// Reads a mask PNG: samples ≥ 128 are foreground.
pub fn read_mask(path: &Path) -> Result<BinaryMask> {
    let raw = decode(path, Transformations::EXPAND | Transformations::STRIP_16)?;
    let channels = match raw.color {
        ColorType::Grayscale => 1,
        ColorType::GrayscaleAlpha => 2,
        ColorType::Rgb => 3,
        ColorType::Rgba => 4,
        ColorType::Indexed => return Err(png_err(path, "palette was not expanded")),
    };
    let mut data = Vec::with_capacity(raw.height * raw.width);
    for row in raw.buf.chunks(raw.line_size) {
        for px in row[..raw.width * channels].chunks(channels) {
            data.push(px[0] >= 128);
        }
    }
    BinaryMask::new(raw.height, raw.width, data)
}

pub fn encode_png(width: usize, height: usize, color: ColorType, data: &[u8]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    {
        let mut encoder = png::Encoder::new(&mut out, width as u32, height as u32);
        encoder.set_color(color);
        encoder.set_depth(BitDepth::Eight);
        let mut writer = encoder
            .write_header()
            .map_err(|e| Error::InvalidInput(e.to_string()))?;
        writer
            .write_image_data(data)
            .map_err(|e| Error::InvalidInput(e.to_string()))?;
    }
    Ok(out)
}

pub fn image_png_bytes(image: &Image) -> Result<Vec<u8>> {
    let color = if image.channels() == 1 {
        ColorType::Grayscale
    } else {
        ColorType::Rgb
    };
    encode_png(image.width(), image.height(), color, &image.to_u8())
}

pub fn mask_png_bytes(mask: &BinaryMask) -> Result<Vec<u8>> {
    encode_png(mask.width(), mask.height(), ColorType::Grayscale, &mask.to_u8())
}

pub fn write_image(path: &Path, image: &Image) -> Result<()> {
    write_atomic(path, &image_png_bytes(image)?)
}

pub fn write_mask(path: &Path, mask: &BinaryMask) -> Result<()> {
    write_atomic(path, &mask_png_bytes(mask)?)
}

/// Writes `bytes` to a temp file next to `path` and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    {
        let mut w = BufWriter::new(tmp.as_file_mut());
        w.write_all(bytes).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))?;
    }
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| Error::Json {
        path: path.to_path_buf(),
        source: e,
    })?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_slice(&bytes).map_err(|e| Error::Json {
        path: path.to_path_buf(),
        source: e,
    })
}
