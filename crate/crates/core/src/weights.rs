//! Portable binary weight files.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic    4 bytes  "VGW1"
//! version  u32      currently 1
//! count    u32      number of entries
//! entry    repeated count times:
//!     name_len u32, name (UTF-8), dtype u8 (1 = f32),
//!     rank u8, dims rank x u64, values (product of dims) x f32
//! crc      u32      CRC-32 (IEEE) of every preceding byte
//! ```
//!
//! The trailer is validated before any entry is parsed, so any single-byte
//! corruption is rejected.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"VGW1";
pub const VERSION: u32 = 1;
pub const DTYPE_F32: u8 = 1;

/// One named tensor in a weight file.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl WeightEntry {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

pub fn to_bytes(entries: &[WeightEntry]) -> Vec<u8> {
    let mut buf = Vec::new();
    buf.extend_from_slice(&MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for entry in entries {
        let name = entry.name.as_bytes();
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name);
        buf.push(DTYPE_F32);
        buf.push(entry.shape.len() as u8);
        for &d in &entry.shape {
            buf.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in &entry.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&buf);
    buf.extend_from_slice(&crc.to_le_bytes());
    buf
}

pub fn save(path: &Path, entries: &[WeightEntry]) -> Result<()> {
    fs::write(path, to_bytes(entries)).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<Vec<WeightEntry>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Truncated(format!(
                "unexpected end of file while reading {what}"
            )));
        }
        let slice = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }
}

pub fn from_bytes(bytes: &[u8]) -> Result<Vec<WeightEntry>> {
    if bytes.len() < 4 || bytes[..4] != MAGIC {
        return Err(Error::BadMagic);
    }
    if bytes.len() < 16 {
        return Err(Error::Truncated("file shorter than header + trailer".into()));
    }
    let body = &bytes[..bytes.len() - 4];
    let stored = u32::from_le_bytes(bytes[bytes.len() - 4..].try_into().unwrap());
    let computed = crc32fast::hash(body);
    if stored != computed {
        return Err(Error::CrcMismatch { stored, computed });
    }

    let mut cur = Cursor { bytes: body, pos: 4 };
    let version = cur.u32("version")?;
    if version != VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let count = cur.u32("entry count")? as usize;
    let mut entries = Vec::with_capacity(count.min(1 << 16));
    for i in 0..count {
        let name_len = cur.u32("name length")? as usize;
        let name = std::str::from_utf8(cur.take(name_len, "entry name")?)
            .map_err(|_| Error::Validation(format!("entry {i}: name is not valid UTF-8")))?
            .to_string();
        let dtype = cur.u8("dtype")?;
        if dtype != DTYPE_F32 {
            return Err(Error::Validation(format!(
                "entry '{name}': unsupported dtype code {dtype}"
            )));
        }
        let rank = cur.u8("rank")? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(cur.u64("dimension")? as usize);
        }
        let numel: usize = shape.iter().product();
        let raw = cur.take(numel * 4, "tensor values")?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        entries.push(WeightEntry { name, shape, data });
    }
    if cur.pos != body.len() {
        return Err(Error::Validation(format!(
            "{} trailing bytes after the last entry",
            body.len() - cur.pos
        )));
    }
    Ok(entries)
}
