//! Binary parameter snapshots.
//!
//! Layout, all integers `u32` little-endian:
//!
//! ```text
//! "SQSG" version count
//! count × { name_len name[name_len] rank dims[rank] f32[prod(dims)] }
//! ```

use std::path::Path;

use crate::arch::ParamStore;
use crate::error::{Error, Result};
use crate::tensor::{Dims, Tensor};

pub const MAGIC: &[u8; 4] = b"SQSG";
pub const VERSION: u32 = 1;
const HEADER_BYTES: usize = 12;

/// Byte accounting of a serialized store.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CheckpointLayout {
    /// Raw parameter values, 4 bytes each.
    pub payload_bytes: usize,
    /// File header plus per-record names and dims.
    pub overhead_bytes: usize,
}

impl CheckpointLayout {
    pub fn total_bytes(&self) -> usize {
        self.payload_bytes + self.overhead_bytes
    }
}

pub fn checkpoint_layout(params: &ParamStore<f32>) -> CheckpointLayout {
    let mut overhead = HEADER_BYTES;
    for (name, _) in params.iter() {
        overhead += 4 + name.len() + 4 + 4 * 4;
    }
    CheckpointLayout {
        payload_bytes: 4 * params.element_count(),
        overhead_bytes: overhead,
    }
}

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Data(format!("{v} does not fit a u32 field")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

pub fn encode_checkpoint(params: &ParamStore<f32>) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(checkpoint_layout(params).total_bytes());
    out.extend_from_slice(MAGIC);
    put_u32(&mut out, VERSION as usize)?;
    put_u32(&mut out, params.len())?;
    for (name, t) in params.iter() {
        put_u32(&mut out, name.len())?;
        out.extend_from_slice(name.as_bytes());
        put_u32(&mut out, 4)?;
        for d in t.dims().to_array() {
            put_u32(&mut out, d)?;
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn err(&self, message: impl Into<String>) -> Error {
        Error::Format {
            what: "checkpoint",
            offset: self.pos,
            message: message.into(),
        }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        match self
            .pos
            .checked_add(n)
            .filter(|&end| end <= self.bytes.len())
        {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(self.err(format!(
                "truncated: {what} needs {n} bytes, {} remain",
                self.bytes.len() - self.pos
            ))),
        }
    }

    fn u32(&mut self, what: &str) -> Result<usize> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<ParamStore<f32>> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        r.pos = 0;
        return Err(r.err("bad magic, expected \"SQSG\""));
    }
    let version = r.u32("version")?;
    if version != VERSION as usize {
        r.pos = 4;
        return Err(r.err(format!("unsupported version {version}, expected {VERSION}")));
    }
    let count = r.u32("record count")?;
    let mut store = ParamStore::new();
    for _ in 0..count {
        let record_at = r.pos;
        let name_len = r.u32("name length")?;
        let name = std::str::from_utf8(r.take(name_len, "name")?)
            .map_err(|_| Error::Format {
                what: "checkpoint",
                offset: record_at + 4,
                message: "parameter name is not UTF-8".into(),
            })?
            .to_string();
        let rank_at = r.pos;
        let rank = r.u32("rank")?;
        if rank != 4 {
            r.pos = rank_at;
            return Err(r.err(format!("parameter `{name}` has rank {rank}, expected 4")));
        }
        let mut dims = [0usize; 4];
        for d in &mut dims {
            *d = r.u32("dims")?;
        }
        let len = Dims::from(dims)
            .checked_len()
            .filter(|&l| l > 0)
            .ok_or_else(|| Error::Format {
                what: "checkpoint",
                offset: rank_at + 4,
                message: format!("parameter `{name}` has invalid dims {dims:?}"),
            })?;
        let nbytes = len
            .checked_mul(4)
            .ok_or_else(|| r.err(format!("parameter `{name}` is too large")))?;
        let raw = r.take(nbytes, "values")?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        if store.get(&name).is_ok() {
            return Err(Error::Format {
                what: "checkpoint",
                offset: record_at,
                message: format!("duplicate parameter name `{name}`"),
            });
        }
        store.insert(name, Tensor::from_vec(dims, data)?)?;
    }
    if r.pos != bytes.len() {
        return Err(r.err(format!(
            "{} trailing bytes after {count} records",
            bytes.len() - r.pos
        )));
    }
    Ok(store)
}

pub fn save_checkpoint(params: &ParamStore<f32>, path: &Path) -> Result<()> {
    std::fs::write(path, encode_checkpoint(params)?)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<ParamStore<f32>> {
    decode_checkpoint(&std::fs::read(path)?)
}
