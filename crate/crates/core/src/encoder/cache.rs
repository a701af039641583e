//! Content-addressed store of aggregated native-space metadata vectors.
//!
//! On-disk format: a flat sequence of records, each a 32-byte SHA-256 key,
//! a little-endian `u32` dimension, then that many little-endian `f32`s.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub type CacheKey = [u8; 32];

pub const CACHE_DIR_ENV: &str = "METATST_CACHE_DIR";
pub const CACHE_FILE_NAME: &str = "meta_embeddings.bin";

/// Digest of `model_id ‖ template_version ‖ strategy ‖ text`, NUL-separated.
pub fn cache_key(model_id: &str, template_version: &str, strategy: &str, text: &str) -> CacheKey {
    let mut h = Sha256::new();
    for part in [model_id, template_version, strategy] {
        h.update(part.as_bytes());
        h.update([0u8]);
    }
    h.update(text.as_bytes());
    h.finalize().into()
}

pub fn encode_record(key: &CacheKey, vector: &[f32]) -> Vec<u8> {
    let mut out = Vec::with_capacity(36 + 4 * vector.len());
    out.extend_from_slice(key);
    out.extend_from_slice(&(vector.len() as u32).to_le_bytes());
    for v in vector {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Parsed records plus the byte length of the valid prefix.
pub fn decode_records(bytes: &[u8]) -> (Vec<(CacheKey, Vec<f32>)>, usize) {
    let mut records = Vec::new();
    let mut pos = 0;
    while bytes.len() - pos >= 36 {
        let mut key = [0u8; 32];
        key.copy_from_slice(&bytes[pos..pos + 32]);
        let dim = u32::from_le_bytes(bytes[pos + 32..pos + 36].try_into().expect("4 bytes")) as usize;
        let end = pos + 36 + 4 * dim;
        if end > bytes.len() {
            break;
        }
        let vector = bytes[pos + 36..end]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        records.push((key, vector));
        pos = end;
    }
    (records, pos)
}

/// Concurrent reads, exclusive writes; optionally persisted to an append-only file.
#[derive(Debug, Default)]
pub struct EmbeddingCache {
    map: RwLock<HashMap<CacheKey, Arc<[f32]>>>,
    file: Option<Mutex<BufWriter<File>>>,
    path: Option<PathBuf>,
}

impl EmbeddingCache {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Open (or create) a cache file. Truncated tails and records with the
    /// wrong dimension or non-finite values are dropped with a warning so the
    /// affected vectors get recomputed.
    pub fn open(path: &Path, expected_dim: Option<usize>) -> Result<Self> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let mut bytes = Vec::new();
        if path.exists() {
            File::open(path)
                .and_then(|mut f| f.read_to_end(&mut bytes))
                .map_err(|e| Error::io(path, e))?;
        }
        let (records, valid_len) = decode_records(&bytes);
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        if valid_len < bytes.len() {
            log::warn!(
                "{}: dropping {} bytes of truncated cache data",
                path.display(),
                bytes.len() - valid_len
            );
            file.set_len(valid_len as u64).map_err(|e| Error::io(path, e))?;
        }
        let mut map = HashMap::with_capacity(records.len());
        let mut dropped = 0;
        for (key, vector) in records {
            let dim_ok = expected_dim.is_none_or(|d| d == vector.len());
            if dim_ok && vector.iter().all(|v| v.is_finite()) {
                map.insert(key, Arc::from(vector));
            } else {
                dropped += 1;
            }
        }
        if dropped > 0 {
            log::warn!("{}: ignored {dropped} corrupt cache records", path.display());
        }
        Ok(EmbeddingCache {
            map: RwLock::new(map),
            file: Some(Mutex::new(BufWriter::new(file))),
            path: Some(path.to_path_buf()),
        })
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn get(&self, key: &CacheKey) -> Option<Arc<[f32]>> {
        self.map.read().expect("cache lock poisoned").get(key).cloned()
    }

    pub fn insert(&self, key: CacheKey, vector: Vec<f32>) -> Result<Arc<[f32]>> {
        let mut map = self.map.write().expect("cache lock poisoned");
        if let Some(existing) = map.get(&key) {
            return Ok(existing.clone());
        }
        if let Some(file) = &self.file {
            let mut w = file.lock().expect("cache file lock poisoned");
            w.write_all(&encode_record(&key, &vector))
                .and_then(|_| w.flush())
                .map_err(|e| Error::io(self.path.clone().unwrap_or_default(), e))?;
        }
        let arc: Arc<[f32]> = Arc::from(vector);
        map.insert(key, arc.clone());
        Ok(arc)
    }

    pub fn len(&self) -> usize {
        self.map.read().expect("cache lock poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}
