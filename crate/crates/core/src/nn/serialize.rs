//! Binary parameter files.
//!
//! Layout: the magic `NSTP1\n`, then one record per parameter (name length
//! as `u32` LE, UTF-8 name, rank as `u32` LE, each dim as `u32` LE, values as
//! `f64` LE row-major), then a CRC32 (`u32` LE) of every byte between the
//! magic and the checksum.

use std::path::Path;

use super::params::ParameterSet;
use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 6] = b"NSTP1\n";

pub fn encode_parameters(params: &ParameterSet) -> Result<Vec<u8>> {
    let mut payload = Vec::new();
    for (name, p) in params.iter() {
        if !p.value.is_finite() {
            return Err(Error::Config(format!("parameter `{name}` has non-finite values")));
        }
        payload.extend_from_slice(&(name.len() as u32).to_le_bytes());
        payload.extend_from_slice(name.as_bytes());
        payload.extend_from_slice(&(p.value.shape().len() as u32).to_le_bytes());
        for &d in p.value.shape() {
            payload.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in p.value.data() {
            payload.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut out = Vec::with_capacity(MAGIC.len() + payload.len() + 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&payload);
    out.extend_from_slice(&crc32fast::hash(&payload).to_le_bytes());
    Ok(out)
}

pub fn decode_parameters(bytes: &[u8]) -> Result<ParameterSet> {
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err(format_err(0, "missing NSTP1 magic"));
    }
    if bytes.len() < MAGIC.len() + 4 {
        return Err(format_err(bytes.len(), "truncated before checksum"));
    }
    let crc_at = bytes.len() - 4;
    let payload = &bytes[MAGIC.len()..crc_at];
    let stored = u32::from_le_bytes(bytes[crc_at..].try_into().unwrap());
    if crc32fast::hash(payload) != stored {
        return Err(format_err(crc_at, "checksum mismatch"));
    }

    let mut cur = Cursor {
        bytes: &bytes[..crc_at],
        pos: MAGIC.len(),
    };
    let mut params = ParameterSet::new();
    while cur.pos < crc_at {
        let start = cur.pos;
        let name_len = cur.u32()? as usize;
        let name = std::str::from_utf8(cur.take(name_len)?)
            .map_err(|_| format_err(start + 4, "parameter name is not UTF-8"))?
            .to_string();
        let rank = cur.u32()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(cur.u32()? as usize);
        }
        let count: usize = shape.iter().product();
        let raw = cur.take(
            count
                .checked_mul(8)
                .ok_or_else(|| format_err(cur.pos, "size overflow"))?,
        )?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        params
            .insert(&name, Tensor::from_vec(&shape, data)?)
            .map_err(|_| format_err(start, &format!("duplicate parameter `{name}`")))?;
    }
    Ok(params)
}

pub fn save_parameters(params: &ParameterSet, path: &Path) -> Result<()> {
    let bytes = encode_parameters(params)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_parameters(path: &Path) -> Result<ParameterSet> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_parameters(&bytes)
}

fn format_err(offset: usize, message: &str) -> Error {
    Error::Format {
        offset: offset as u64,
        message: message.to_string(),
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(format_err(self.pos, "truncated record")),
        }
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}
