//! `DVCK` parameter container.
//!
//! Layout (all integers little-endian `u32`):
//!
//! ```text
//! "DVCK" | version | block* | crc32
//! block := name_len | name (UTF-8) | ndim | dim* | f32 data (row-major)
//! ```
//!
//! The trailing CRC32 covers every preceding byte.

use std::io::{Read, Write};

use crate::error::{NdError, Result};
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"DVCK";
pub const CHECKPOINT_VERSION: u32 = 1;

pub type Block = (String, Tensor<f32>);

pub fn encode_blocks(blocks: &[Block]) -> Vec<u8> {
    let mut buf = Vec::new();
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    for (name, t) in blocks {
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.extend_from_slice(&(t.ndim() as u32).to_le_bytes());
        for &d in t.shape() {
            buf.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in t.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&buf);
    buf.extend_from_slice(&crc.to_le_bytes());
    buf
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(NdError::Checkpoint("truncated block".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

pub fn decode_blocks(bytes: &[u8]) -> Result<Vec<Block>> {
    if bytes.len() < 12 || &bytes[..4] != CHECKPOINT_MAGIC {
        return Err(NdError::Checkpoint("bad magic".into()));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().unwrap());
    if crc32fast::hash(body) != stored {
        return Err(NdError::Checkpoint("CRC mismatch".into()));
    }
    let mut cur = Cursor { buf: body, pos: 4 };
    let version = cur.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(NdError::Checkpoint(format!("unsupported version {version}")));
    }
    let mut blocks = Vec::new();
    while cur.pos < body.len() {
        let name_len = cur.u32()? as usize;
        let name = std::str::from_utf8(cur.take(name_len)?)
            .map_err(|e| NdError::Checkpoint(format!("block name: {e}")))?
            .to_owned();
        let ndim = cur.u32()? as usize;
        let shape = (0..ndim)
            .map(|_| cur.u32().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let raw = cur.take(n * 4)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        blocks.push((name, Tensor::from_vec(&shape, data)?));
    }
    Ok(blocks)
}

pub fn write_blocks<W: Write>(mut w: W, blocks: &[Block]) -> Result<()> {
    w.write_all(&encode_blocks(blocks))?;
    Ok(())
}

pub fn read_blocks<R: Read>(mut r: R) -> Result<Vec<Block>> {
    let mut buf = Vec::new();
    r.read_to_end(&mut buf)?;
    decode_blocks(&buf)
}
