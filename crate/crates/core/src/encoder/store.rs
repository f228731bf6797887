//! `EMB1` embedding store.
//!
//! Layout: magic `EMB1`, little-endian `u32` count, `u32` dim, then
//! `count × dim` little-endian `f32`. Row ids live in a sidecar
//! `<file>.json` of the form `{"ids": [...]}`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::GlobalEmbedding;
use crate::error::{Error, Result};
use crate::io::{read_json, write_atomic, write_json};

pub const EMBEDDING_MAGIC: &[u8; 4] = b"EMB1";

#[derive(Serialize, Deserialize)]
struct Sidecar {
    ids: Vec<String>,
}

pub(crate) fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

pub fn write_embedding_store(path: &Path, embeddings: &[GlobalEmbedding]) -> Result<()> {
    let dim = embeddings.first().map_or(0, GlobalEmbedding::dim);
    if let Some(bad) = embeddings.iter().find(|e| e.dim() != dim) {
        return Err(Error::DimensionMismatch(format!(
            "embedding `{}` has dim {}, expected {dim}",
            bad.id,
            bad.dim()
        )));
    }
    let mut bytes = Vec::with_capacity(12 + embeddings.len() * dim * 4);
    bytes.extend_from_slice(EMBEDDING_MAGIC);
    bytes.extend_from_slice(&(embeddings.len() as u32).to_le_bytes());
    bytes.extend_from_slice(&(dim as u32).to_le_bytes());
    for e in embeddings {
        for v in e.vector() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    write_atomic(path, &bytes)?;
    write_json(
        &sidecar_path(path),
        &Sidecar {
            ids: embeddings.iter().map(|e| e.id.clone()).collect(),
        },
    )
}

/// Loads an `EMB1` store and its sidecar; vectors are re-normalized.
pub fn load_embedding_store(path: &Path) -> Result<Vec<GlobalEmbedding>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let (count, dim) = parse_header(path, &bytes)?;
    let expected = 12 + count * dim * 4;
    if bytes.len() != expected {
        return Err(Error::format(
            path,
            bytes.len().min(expected) as u64,
            format!(
                "expected {expected} bytes for {count} vectors of dim {dim}, found {}",
                bytes.len()
            ),
        ));
    }
    let sidecar: Sidecar = read_json(&sidecar_path(path))?;
    if sidecar.ids.len() != count {
        return Err(Error::format(
            path,
            4,
            format!("header count {count} but sidecar lists {} ids", sidecar.ids.len()),
        ));
    }

    let mut out = Vec::with_capacity(count);
    let mut row = vec![0.0f64; dim];
    for (i, id) in sidecar.ids.into_iter().enumerate() {
        for (j, slot) in row.iter_mut().enumerate() {
            let offset = 12 + (i * dim + j) * 4;
            let v = f32::from_le_bytes(bytes[offset..offset + 4].try_into().unwrap());
            if !v.is_finite() {
                return Err(Error::format(path, offset as u64, "non-finite value"));
            }
            *slot = f64::from(v);
        }
        let embedding = GlobalEmbedding::new(id, &row)
            .map_err(|e| Error::format(path, (12 + i * dim * 4) as u64, e.to_string()))?;
        out.push(embedding);
    }
    Ok(out)
}

fn parse_header(path: &Path, bytes: &[u8]) -> Result<(usize, usize)> {
    if bytes.len() < 4 || &bytes[..4] != EMBEDDING_MAGIC {
        return Err(Error::format(path, 0, "bad magic, expected EMB1"));
    }
    if bytes.len() < 12 {
        return Err(Error::format(path, bytes.len() as u64, "truncated header"));
    }
    let count = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let dim = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    if dim == 0 && count > 0 {
        return Err(Error::format(path, 8, "dim is zero"));
    }
    Ok((count, dim))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Vec<GlobalEmbedding> {
        vec![
            GlobalEmbedding::new("a", &[1.0, 2.0, 3.0, 4.0]).unwrap(),
            GlobalEmbedding::new("b", &[0.0, 1.0, 0.0, 0.0]).unwrap(),
            GlobalEmbedding::new("c", &[-1.0, 0.5, 0.25, 2.0]).unwrap(),
        ]
    }

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("emb.bin");
        write_embedding_store(&path, &sample()).unwrap();
        let loaded = load_embedding_store(&path).unwrap();
        assert_eq!(loaded.len(), 3);
        for (l, s) in loaded.iter().zip(sample()) {
            assert_eq!(l.id, s.id);
            let norm: f64 = l.vector().iter().map(|&v| f64::from(v).powi(2)).sum();
            assert!((norm.sqrt() - 1.0).abs() < 1e-6);
            for (x, y) in l.vector().iter().zip(s.vector()) {
                assert!((x - y).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn header_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("emb.bin");
        write_embedding_store(&path, &sample()).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(&bytes[..12], b"EMB1\x03\x00\x00\x00\x04\x00\x00\x00");
        assert_eq!(bytes.len(), 12 + 3 * 4 * 4);
        assert_eq!(&bytes[32..36], &1.0f32.to_le_bytes());
    }

    #[test]
    fn truncated_file_fails_whole() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("emb.bin");
        write_embedding_store(&path, &sample()).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        match load_embedding_store(&path) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, 57),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn bad_magic_and_non_finite() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("emb.bin");
        write_embedding_store(&path, &sample()).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[0] = b'X';
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(load_embedding_store(&path), Err(Error::Format { offset: 0, .. })));

        bytes[0] = b'E';
        bytes[20..24].copy_from_slice(&f32::NAN.to_le_bytes());
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(load_embedding_store(&path), Err(Error::Format { offset: 20, .. })));
    }

    #[test]
    fn sidecar_count_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("emb.bin");
        write_embedding_store(&path, &sample()).unwrap();
        std::fs::write(sidecar_path(&path), r#"{"ids": ["a", "b"]}"#).unwrap();
        assert!(matches!(load_embedding_store(&path), Err(Error::Format { .. })));
    }
}
