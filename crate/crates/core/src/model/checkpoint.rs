//! Named-tensor checkpoint files.
//!
//! Layout (little-endian): magic `SSVK`, format version u32, record count
//! u32, then per record: name length u32, UTF-8 name, ndim u32, ndim × u32
//! dimensions, f64 payload.

use std::io::Write as _;
use std::path::Path;

use indexmap::IndexMap;

use crate::diffcore::Array;
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"SSVK";
const VERSION: u32 = 1;

/// Ordered name → tensor map.
pub type Tensors = IndexMap<String, Array>;

pub fn encode(tensors: &Tensors) -> Vec<u8> {
    let mut b = Vec::new();
    b.extend_from_slice(MAGIC);
    b.extend_from_slice(&VERSION.to_le_bytes());
    b.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, a) in tensors {
        b.extend_from_slice(&(name.len() as u32).to_le_bytes());
        b.extend_from_slice(name.as_bytes());
        b.extend_from_slice(&(a.ndim() as u32).to_le_bytes());
        for &d in a.shape() {
            b.extend_from_slice(&(d as u32).to_le_bytes());
        }
        b.extend_from_slice(&a.to_le_bytes());
    }
    b
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| format!("truncated at byte {}", self.pos))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> std::result::Result<usize, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }
}

pub fn decode(bytes: &[u8]) -> std::result::Result<Tensors, String> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err("missing SSVK magic".into());
    }
    let version = r.u32()?;
    if version != VERSION as usize {
        return Err(format!("unsupported version {version}"));
    }
    let count = r.u32()?;
    let mut out = Tensors::with_capacity(count);
    for _ in 0..count {
        let len = r.u32()?;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| "record name is not UTF-8".to_string())?;
        let ndim = r.u32()?;
        let shape: Vec<usize> = (0..ndim)
            .map(|_| r.u32())
            .collect::<std::result::Result<_, _>>()?;
        let n: usize = shape.iter().product();
        let payload = r.take(n.checked_mul(8).ok_or("tensor too large")?)?;
        let data = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let a = Array::new(shape, data).map_err(|e| e.to_string())?;
        if out.insert(name.to_string(), a).is_some() {
            return Err(format!("duplicate record {name:?}"));
        }
    }
    if r.pos != bytes.len() {
        return Err(format!("{} trailing bytes", bytes.len() - r.pos));
    }
    Ok(out)
}

pub fn save(path: &Path, tensors: &Tensors) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&encode(tensors))
        .map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<Tensors> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes).map_err(|d| Error::format("checkpoint", path, d))
}
