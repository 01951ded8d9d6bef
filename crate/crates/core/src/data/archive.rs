//! `EMB1` embedding archives.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "EMB1" | u32 version (1) | u32 dim | u32 record count
//! per record: u16 id length | id (UTF-8) | u16 vector count n | n * dim f32
//! ```

use std::collections::{HashMap, HashSet};
use std::path::Path;

use crate::error::{Error, Result};
use crate::fsutil::{self, ByteReader};
use crate::tensor::Tensor;

pub const ARCHIVE_MAGIC: &[u8; 4] = b"EMB1";
pub const ARCHIVE_VERSION: u32 = 1;
pub const ARCHIVE_HEADER_LEN: usize = 16;

#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingRecord {
    pub id: String,
    /// `n × dim`, promoted from the on-disk `f32`.
    pub vectors: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingArchive {
    pub dim: usize,
    pub records: Vec<EmbeddingRecord>,
}

impl EmbeddingArchive {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            records: Vec::new(),
        }
    }

    pub fn push(&mut self, id: impl Into<String>, vectors: Tensor) -> Result<()> {
        let id = id.into();
        let (n, d) = vectors.dims2()?;
        if d != self.dim {
            return Err(Error::dim(format!(
                "record {id:?} has dim {d}, archive dim is {}",
                self.dim
            )));
        }
        if n > u16::MAX as usize || id.len() > u16::MAX as usize {
            return Err(Error::dim(format!(
                "record {id:?} is too large for the format"
            )));
        }
        if !vectors.is_finite() {
            return Err(Error::Numeric(format!(
                "record {id:?} has non-finite values"
            )));
        }
        if self.records.iter().any(|r| r.id == id) {
            return Err(Error::Dataset(format!("duplicate record id {id:?}")));
        }
        let vectors = vectors.reshaped(vec![n, d])?;
        self.records.push(EmbeddingRecord { id, vectors });
        Ok(())
    }

    pub fn index(&self) -> HashMap<&str, &EmbeddingRecord> {
        self.records.iter().map(|r| (r.id.as_str(), r)).collect()
    }

    pub fn encoded_len(&self) -> usize {
        ARCHIVE_HEADER_LEN
            + self
                .records
                .iter()
                .map(|r| 2 + r.id.len() + 2 + r.vectors.len() * 4)
                .sum::<usize>()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.encoded_len());
        out.extend_from_slice(ARCHIVE_MAGIC);
        out.extend_from_slice(&ARCHIVE_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        out.extend_from_slice(&(self.records.len() as u32).to_le_bytes());
        for r in &self.records {
            out.extend_from_slice(&(r.id.len() as u16).to_le_bytes());
            out.extend_from_slice(r.id.as_bytes());
            let n = r.vectors.len() / self.dim;
            out.extend_from_slice(&(n as u16).to_le_bytes());
            for &v in r.vectors.data() {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        out
    }

    /// Parses an archive; `path` only labels errors.
    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let mut r = ByteReader::new(bytes, path);
        if r.take(4, "magic")? != ARCHIVE_MAGIC {
            return Err(r.error_at(0, "bad magic, expected \"EMB1\""));
        }
        let version = r.u32("version")?;
        if version != ARCHIVE_VERSION {
            return Err(r.error_at(4, format!("unsupported version {version}")));
        }
        let dim = r.u32("dim")? as usize;
        if dim == 0 {
            return Err(r.error_at(8, "dim is zero"));
        }
        let count = r.u32("record count")? as usize;
        let mut records = Vec::with_capacity(count.min(1 << 16));
        let mut seen = HashSet::new();
        for k in 0..count {
            let start = r.pos();
            let id_len = r.u16("id length")? as usize;
            let id = r.utf8(id_len, "record id")?;
            if !seen.insert(id.clone()) {
                return Err(r.error_at(start, format!("duplicate record id {id:?}")));
            }
            let n_at = r.pos();
            let n = r.u16("vector count")? as usize;
            if n == 0 {
                return Err(r.error_at(n_at, format!("record {k} ({id:?}) has no vectors")));
            }
            let payload_at = r.pos();
            let want = n * dim * 4;
            if r.remaining() < want {
                return Err(r.error_at(
                    payload_at,
                    format!(
                        "record {id:?}: {n} vectors x dim {dim} needs {want} bytes, {} left",
                        r.remaining()
                    ),
                ));
            }
            let raw = r.take(want, "vectors")?;
            let data: Vec<f64> = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
                .collect();
            if let Some(bad) = data.iter().position(|v| !v.is_finite()) {
                return Err(r.error_at(payload_at + bad * 4, format!("non-finite value in {id:?}")));
            }
            records.push(EmbeddingRecord {
                id,
                vectors: Tensor::new(vec![n, dim], data)?,
            });
        }
        if r.remaining() != 0 {
            return Err(r.error_at(r.pos(), format!("{} trailing bytes", r.remaining())));
        }
        Ok(Self { dim, records })
    }
}

/// Atomically writes the archive and fsyncs it.
pub fn write_archive(archive: &EmbeddingArchive, path: &Path) -> Result<()> {
    fsutil::write_atomic(path, &archive.to_bytes())
}

pub fn read_archive(path: &Path) -> Result<EmbeddingArchive> {
    let bytes = fsutil::read(path)?;
    EmbeddingArchive::from_bytes(&bytes, path)
}
