//! Binary embedding file format.
//!
//! ```text
//! "GBEM"            4 bytes magic
//! 0x01              format version
//! view tag          u8 (0 drone, 1 panorama, 2 satellite, 3 text)
//! count             u64 little-endian
//! dim               u32 little-endian
//! count records of:
//!   id              u64 little-endian
//!   values          dim x IEEE-754 binary32 little-endian
//! ```
//!
//! Values are stored in single precision. Rows must be unit-norm; the reader
//! checks every row against [`UNIT_NORM_TOLERANCE`](super::UNIT_NORM_TOLERANCE).

use std::io::{self, Read, Write};

use ndarray::Array2;
use thiserror::Error;

use super::{EmbeddingBatch, EmbeddingError, View};

pub const MAGIC: &[u8; 4] = b"GBEM";
pub const VERSION: u8 = 0x01;
const HEADER_LEN: usize = 4 + 1 + 1 + 8 + 4;

#[derive(Debug, Error)]
pub enum GbemError {
    #[error("bad magic {0:02x?}, expected \"GBEM\"")]
    BadMagic([u8; 4]),
    #[error("unsupported format version {0}")]
    UnsupportedVersion(u8),
    #[error("unknown view tag {0}")]
    BadViewTag(u8),
    #[error("file truncated in {0}")]
    Truncated(&'static str),
    #[error("{0} trailing bytes after the last record")]
    TrailingBytes(usize),
    #[error("record {record}: {source}")]
    Record { record: usize, source: EmbeddingError },
    #[error("invalid batch: {0}")]
    Batch(#[from] EmbeddingError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub fn encode(batch: &EmbeddingBatch) -> Vec<u8> {
    let dim = batch.dim();
    let mut out = Vec::with_capacity(HEADER_LEN + batch.len() * (8 + 4 * dim));
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.push(batch.view().tag());
    out.extend_from_slice(&(batch.len() as u64).to_le_bytes());
    out.extend_from_slice(&(dim as u32).to_le_bytes());
    for (id, row) in batch.ids().iter().zip(batch.matrix().rows()) {
        out.extend_from_slice(&id.to_le_bytes());
        for &v in row {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out
}

pub fn write<W: Write>(mut w: W, batch: &EmbeddingBatch) -> Result<(), GbemError> {
    w.write_all(&encode(batch))?;
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8], GbemError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or(GbemError::Truncated(what))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn array<const N: usize>(&mut self, what: &'static str) -> Result<[u8; N], GbemError> {
        Ok(self.take(N, what)?.try_into().expect("take returns exactly N bytes"))
    }
}

pub fn decode(bytes: &[u8]) -> Result<EmbeddingBatch, GbemError> {
    let mut cur = Cursor { bytes, pos: 0 };
    let magic: [u8; 4] = cur.array("magic")?;
    if &magic != MAGIC {
        return Err(GbemError::BadMagic(magic));
    }
    let [version] = cur.array("version")?;
    if version != VERSION {
        return Err(GbemError::UnsupportedVersion(version));
    }
    let [tag] = cur.array("view tag")?;
    let view = View::from_tag(tag).ok_or(GbemError::BadViewTag(tag))?;
    let count = u64::from_le_bytes(cur.array("count")?);
    let dim = u32::from_le_bytes(cur.array("dimension")?) as usize;

    let record_len = 8 + 4 * dim;
    let remaining = bytes.len() - cur.pos;
    let count = usize::try_from(count)
        .ok()
        .filter(|&c| c.checked_mul(record_len).is_some_and(|n| n <= remaining))
        .ok_or(GbemError::Truncated("records"))?;

    let mut ids = Vec::with_capacity(count);
    let mut values = Vec::with_capacity(count * dim);
    for record in 0..count {
        let id = u64::from_le_bytes(cur.array("record id")?);
        let raw = cur.take(4 * dim, "record values")?;
        let mut sq = 0.0f64;
        for chunk in raw.chunks_exact(4) {
            let v = f32::from_le_bytes(chunk.try_into().expect("4-byte chunk")) as f64;
            if !v.is_finite() {
                return Err(GbemError::Record {
                    record,
                    source: EmbeddingError::NonFinite,
                });
            }
            sq += v * v;
            values.push(v);
        }
        let norm = sq.sqrt();
        if (norm - 1.0).abs() > super::UNIT_NORM_TOLERANCE {
            return Err(GbemError::Record {
                record,
                source: EmbeddingError::NonUnitRow { row: record, id, norm },
            });
        }
        ids.push(id);
    }
    if cur.pos != bytes.len() {
        return Err(GbemError::TrailingBytes(bytes.len() - cur.pos));
    }
    let matrix = Array2::from_shape_vec((count, dim), values).expect("count * dim values");
    Ok(EmbeddingBatch::new(view, ids, matrix)?)
}

pub fn read<R: Read>(mut r: R) -> Result<EmbeddingBatch, GbemError> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    decode(&bytes)
}
