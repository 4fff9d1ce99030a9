//! Flat binary container for named tensors.
//!
//! Layout: the magic `FEAN1`, then one record per tensor until end of file:
//! name length (`u32` LE), UTF-8 name bytes, four `u32` LE dims (n, c, h, w),
//! then `n*c*h*w` little-endian `f64` values.

use std::io::{Read, Write};

use super::{Shape, Tensor};
use crate::error::{Error, Result};

pub const CONTAINER_MAGIC: &[u8; 5] = b"FEAN1";

pub fn write_container<W: Write>(mut out: W, tensors: &[(&str, &Tensor)]) -> std::io::Result<()> {
    out.write_all(CONTAINER_MAGIC)?;
    for (name, t) in tensors {
        out.write_all(&(name.len() as u32).to_le_bytes())?;
        out.write_all(name.as_bytes())?;
        for d in t.shape().dims() {
            out.write_all(&(d as u32).to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(t.numel() * 8);
        for v in t.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        out.write_all(&buf)?;
    }
    out.flush()
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, len: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < len {
            return Err(Error::Checkpoint(format!(
                "truncated {what} at byte {} (need {len}, have {})",
                self.pos,
                self.bytes.len() - self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + len];
        self.pos += len;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")))
    }
}

pub fn read_container<R: Read>(mut input: R) -> Result<Vec<(String, Tensor)>> {
    let mut bytes = Vec::new();
    input
        .read_to_end(&mut bytes)
        .map_err(|e| Error::Checkpoint(e.to_string()))?;
    let mut cur = Cursor {
        bytes: &bytes,
        pos: 0,
    };
    if cur.take(5, "magic")? != CONTAINER_MAGIC {
        return Err(Error::Checkpoint("missing FEAN1 magic".into()));
    }
    let mut out = Vec::new();
    while cur.pos < bytes.len() {
        let len = cur.u32("name length")? as usize;
        let name = std::str::from_utf8(cur.take(len, "name")?)
            .map_err(|_| Error::Checkpoint(format!("non-UTF-8 name before byte {}", cur.pos)))?
            .to_string();
        let mut dims = [0usize; 4];
        for d in &mut dims {
            *d = cur.u32("dims")? as usize;
        }
        let shape = Shape::from(dims);
        let raw = cur.take(shape.numel() * 8, "values")?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        out.push((name, Tensor::from_vec(shape, data)?));
    }
    Ok(out)
}
