//! Binary checkpoint container.
//!
//! Layout, all integers little-endian: magic `UHCK`, `u32` version, `u32`
//! entry count, then per entry a `u16` name length, the UTF-8 name, a `u8`
//! rank, `rank` `u32` dims and the `f32` payload.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"UHCK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct CheckpointEntry {
    pub name: String,
    pub dims: Vec<u32>,
    pub data: Vec<f32>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub entries: Vec<CheckpointEntry>,
}

impl Checkpoint {
    pub fn get(&self, name: &str) -> Option<&CheckpointEntry> {
        self.entries.iter().find(|e| e.name == name)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(&CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        let count = u32::try_from(self.entries.len())
            .map_err(|_| Error::Checkpoint("too many entries".into()))?;
        out.extend_from_slice(&count.to_le_bytes());
        for e in &self.entries {
            let name_len = u16::try_from(e.name.len())
                .map_err(|_| Error::Checkpoint(format!("name too long: '{}'", e.name)))?;
            let rank = u8::try_from(e.dims.len())
                .map_err(|_| Error::Checkpoint(format!("rank too large for '{}'", e.name)))?;
            let expected: u64 = e.dims.iter().map(|&d| d as u64).product();
            if expected != e.data.len() as u64 {
                return Err(Error::Checkpoint(format!(
                    "entry '{}': dims {:?} do not match {} values",
                    e.name,
                    e.dims,
                    e.data.len()
                )));
            }
            out.extend_from_slice(&name_len.to_le_bytes());
            out.extend_from_slice(e.name.as_bytes());
            out.push(rank);
            for d in &e.dims {
                out.extend_from_slice(&d.to_le_bytes());
            }
            for v in &e.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let magic = r.take(4, "magic")?;
        if magic != CHECKPOINT_MAGIC {
            return Err(Error::Checkpoint(format!("bad magic {magic:02x?}, expected \"UHCK\"")));
        }
        let version = r.u32("version")?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported version {version}, expected {CHECKPOINT_VERSION}"
            )));
        }
        let count = r.u32("entry count")?;
        let mut entries = Vec::new();
        for i in 0..count {
            let ctx = format!("entry {i}");
            let name_len = r.u16(&ctx)? as usize;
            let name = std::str::from_utf8(r.take(name_len, &ctx)?)
                .map_err(|_| Error::Checkpoint(format!("{ctx}: name is not UTF-8")))?
                .to_string();
            let ctx = format!("entry '{name}'");
            let rank = r.take(1, &ctx)?[0] as usize;
            let dims = (0..rank).map(|_| r.u32(&ctx)).collect::<Result<Vec<_>>>()?;
            let len = dims
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d as usize))
                .filter(|&n| n.checked_mul(4).is_some_and(|b| b <= r.remaining()))
                .ok_or_else(|| Error::Checkpoint(format!("{ctx}: truncated payload for dims {dims:?}")))?;
            let data = r
                .take(len * 4, &ctx)?
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            entries.push(CheckpointEntry { name, dims, data });
        }
        if r.remaining() != 0 {
            return Err(Error::Checkpoint(format!("{} trailing bytes", r.remaining())));
        }
        Ok(Self { entries })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            Error::Checkpoint(m) => Error::Checkpoint(format!("{}: {m}", path.display())),
            other => other,
        })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    fn take(&mut self, n: usize, ctx: &str) -> Result<&'a [u8]> {
        if n > self.remaining() {
            return Err(Error::Checkpoint(format!(
                "{ctx}: truncated at byte {} (need {n}, have {})",
                self.pos,
                self.remaining()
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self, ctx: &str) -> Result<u16> {
        let b = self.take(2, ctx)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self, ctx: &str) -> Result<u32> {
        let b = self.take(4, ctx)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}
