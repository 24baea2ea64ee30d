//! `LSDS` sample-dataset files.
//!
//! Little-endian layout:
//!
//! ```text
//! "LSDS" | version u32 = 1 | d u32 | m u32 | count u64 | seed u64 | space u8 (0 = Z, 1 = W)
//! count × ( d × f32 latent | m × f32 scores )
//! ```

use std::fs;
use std::io::{self, Write};
use std::path::Path;

use thiserror::Error;

use crate::geometry::Space;
use crate::pipeline::SampleDataset;

pub const MAGIC: &[u8; 4] = b"LSDS";
pub const VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 4 + 4 + 8 + 8 + 1;

#[derive(Debug, Error)]
pub enum LsdsError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("not an LSDS file")]
    BadMagic,
    #[error("unsupported LSDS version {0}")]
    UnsupportedVersion(u32),
    #[error("unknown space tag {0}")]
    BadSpace(u8),
    #[error("file truncated at byte {offset} (expected {expected} bytes)")]
    Truncated { offset: usize, expected: usize },
    #[error("{0} unexpected trailing bytes")]
    TrailingBytes(usize),
}

pub fn encode(ds: &SampleDataset) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + ds.count() * (ds.dim() + ds.attribute_count()) * 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(ds.dim() as u32).to_le_bytes());
    out.extend_from_slice(&(ds.attribute_count() as u32).to_le_bytes());
    out.extend_from_slice(&(ds.count() as u64).to_le_bytes());
    out.extend_from_slice(&ds.seed().to_le_bytes());
    out.push(match ds.space() {
        Space::Z => 0,
        Space::W => 1,
    });
    for i in 0..ds.count() {
        for v in ds.latent(i).iter().chain(ds.scores(i)) {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn decode(bytes: &[u8]) -> Result<SampleDataset, LsdsError> {
    let mut cur = Cursor { bytes, pos: 0 };
    if cur.take(4)? != MAGIC {
        return Err(LsdsError::BadMagic);
    }
    let version = cur.u32()?;
    if version != VERSION {
        return Err(LsdsError::UnsupportedVersion(version));
    }
    let dim = cur.u32()? as usize;
    let m = cur.u32()? as usize;
    let count = cur.u64()? as usize;
    let seed = cur.u64()?;
    let space = match cur.take(1)?[0] {
        0 => Space::Z,
        1 => Space::W,
        other => return Err(LsdsError::BadSpace(other)),
    };
    let record = (dim + m) * 4;
    let expected = count
        .checked_mul(record)
        .and_then(|n| n.checked_add(HEADER_LEN))
        .ok_or(LsdsError::Truncated { offset: bytes.len(), expected: usize::MAX })?;
    if bytes.len() < expected {
        return Err(LsdsError::Truncated { offset: bytes.len(), expected });
    }
    if bytes.len() > expected {
        return Err(LsdsError::TrailingBytes(bytes.len() - expected));
    }
    let mut latents = Vec::with_capacity(count * dim);
    let mut scores = Vec::with_capacity(count * m);
    for _ in 0..count {
        for _ in 0..dim {
            latents.push(cur.f32()?);
        }
        for _ in 0..m {
            scores.push(cur.f32()?);
        }
    }
    Ok(SampleDataset::from_parts(dim, m, seed, space, latents, scores))
}

/// Writes `ds` to `path`, replacing any existing file atomically.
pub fn write(path: &Path, ds: &SampleDataset) -> Result<(), LsdsError> {
    let tmp = path.with_extension("lsds.tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(&encode(ds))?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn read(path: &Path) -> Result<SampleDataset, LsdsError> {
    decode(&fs::read(path)?)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], LsdsError> {
        let end = self.pos + n;
        if end > self.bytes.len() {
            return Err(LsdsError::Truncated { offset: self.bytes.len(), expected: end });
        }
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, LsdsError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, LsdsError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f32(&mut self) -> Result<f32, LsdsError> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}
