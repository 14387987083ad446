//! Versioned flat binary format for named tensor collections.
//!
//! Layout: the magic bytes `DPNSE01`, then one record per tensor:
//!
//! ```text
//! name_len: u64 LE
//! name:     name_len bytes of UTF-8
//! rank:     u64 LE
//! dims:     rank u64 LE values
//! data:     product(dims) f64 LE values
//! ```
//!
//! Records run to the end of the stream. Round-tripping is bit-exact: floats
//! are written with `to_le_bytes` and read back with `from_le_bytes`.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 7] = b"DPNSE01";

/// Encodes named tensors in the given order.
pub fn encode_tensors(entries: &[(String, Tensor)]) -> Vec<u8> {
    let payload: usize = entries
        .iter()
        .map(|(n, t)| 8 + n.len() + 8 + 8 * t.rank() + 8 * t.numel())
        .sum();
    let mut out = Vec::with_capacity(MAGIC.len() + payload);
    out.extend_from_slice(MAGIC);
    for (name, tensor) in entries {
        out.extend_from_slice(&(name.len() as u64).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(tensor.rank() as u64).to_le_bytes());
        for &d in tensor.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in tensor.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Format(format!(
                "truncated stream: wanted {n} bytes at offset {}, have {}",
                self.pos,
                self.bytes.len() - self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64> {
        let b = self.take(8)?;
        Ok(u64::from_le_bytes(b.try_into().expect("slice of length 8")))
    }

    fn f64(&mut self) -> Result<f64> {
        let b = self.take(8)?;
        Ok(f64::from_le_bytes(b.try_into().expect("slice of length 8")))
    }

    fn done(&self) -> bool {
        self.pos == self.bytes.len()
    }
}

/// Decodes a stream produced by [`encode_tensors`], preserving record order.
pub fn decode_tensors(bytes: &[u8]) -> Result<Vec<(String, Tensor)>> {
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err(Error::Format("missing DPNSE01 magic".into()));
    }
    let mut r = Reader { bytes, pos: MAGIC.len() };
    let mut out = Vec::new();
    while !r.done() {
        let name_len = r.u64()? as usize;
        let name = String::from_utf8(r.take(name_len)?.to_vec())
            .map_err(|_| Error::Format("tensor name is not UTF-8".into()))?;
        let rank = r.u64()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u64()? as usize);
        }
        let numel: usize = shape.iter().product();
        let mut data = Vec::with_capacity(numel);
        for _ in 0..numel {
            data.push(r.f64()?);
        }
        out.push((name, Tensor::new(shape, data)?));
    }
    Ok(out)
}
