//! Versioned flat checkpoint files.
//!
//! Layout: magic `b"SRCKPT"` + format version (u32 LE) + section count
//! (u32 LE), then per section: name length (u32 LE), UTF-8 name, rank
//! (u32 LE), dims (u64 LE each), and the row-major f64 payload (LE bits).
//! Round-trips are bit-exact.

use std::path::Path;

use crate::error::{Error, Result};
use crate::io::atomic_write;

const MAGIC: &[u8; 6] = b"SRCKPT";
const VERSION: u32 = 1;

/// One named tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Section {
    pub name: String,
    pub dims: Vec<u64>,
    pub data: Vec<f64>,
}

impl Section {
    pub fn new(name: &str, dims: &[u64], data: Vec<f64>) -> Self {
        debug_assert_eq!(dims.iter().product::<u64>() as usize, data.len());
        Section {
            name: name.to_string(),
            dims: dims.to_vec(),
            data,
        }
    }
}

/// A checkpoint: an ordered list of named tensors.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Checkpoint {
    pub sections: Vec<Section>,
}

impl Checkpoint {
    pub fn section(&self, name: &str) -> Result<&Section> {
        self.sections
            .iter()
            .find(|s| s.name == name)
            .ok_or_else(|| Error::Checkpoint(format!("missing section `{name}`")))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.sections.len() as u32).to_le_bytes());
        for s in &self.sections {
            let name = s.name.as_bytes();
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name);
            out.extend_from_slice(&(s.dims.len() as u32).to_le_bytes());
            for d in &s.dims {
                out.extend_from_slice(&d.to_le_bytes());
            }
            for v in &s.data {
                out.extend_from_slice(&v.to_bits().to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cur = Cursor { bytes, pos: 0 };
        let magic = cur.take(6)?;
        if magic != MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let version = cur.u32()?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint version {version}"
            )));
        }
        let n_sections = cur.u32()? as usize;
        let mut sections = Vec::with_capacity(n_sections);
        for _ in 0..n_sections {
            let name_len = cur.u32()? as usize;
            let name = String::from_utf8(cur.take(name_len)?.to_vec())
                .map_err(|_| Error::Checkpoint("non-UTF-8 section name".into()))?;
            let rank = cur.u32()? as usize;
            let mut dims = Vec::with_capacity(rank);
            for _ in 0..rank {
                dims.push(cur.u64()?);
            }
            let count = dims.iter().product::<u64>() as usize;
            let mut data = Vec::with_capacity(count);
            for _ in 0..count {
                data.push(f64::from_bits(cur.u64()?));
            }
            sections.push(Section { name, dims, data });
        }
        if cur.pos != bytes.len() {
            return Err(Error::Checkpoint("trailing bytes".into()));
        }
        Ok(Checkpoint { sections })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        atomic_write(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)
            .map_err(|e| Error::MissingInput(format!("{}: {e}", path.display())))?;
        Self::from_bytes(&bytes)
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Checkpoint("truncated checkpoint".into()));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes(b.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        let b = self.take(8)?;
        Ok(u64::from_le_bytes(b.try_into().unwrap()))
    }
}
