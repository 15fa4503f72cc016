//! Binary containers for frames/features (`DVFR`) and embeddings (`DVEM`).
//!
//! ```text
//! DVFR: "DVFR" | u32 rows | u32 cols | f32[rows*cols] row-major | u32 meta_len | meta (UTF-8)
//! DVEM: "DVEM" | u32 dim  | f32[dim]                            | u32 meta_len | meta (UTF-8)
//! ```
//!
//! Integers and floats are little-endian. Frame metadata is
//! `subject=<id>\nclip=<id>\n`; embedding metadata is free-form provenance.

use crate::audio::SpeechFrame;
use crate::error::{DvError, Result};

pub const FRAME_MAGIC: &[u8; 4] = b"DVFR";
pub const EMBEDDING_MAGIC: &[u8; 4] = b"DVEM";

fn put_u32(buf: &mut Vec<u8>, v: u32) {
    buf.extend_from_slice(&v.to_le_bytes());
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(DvError::Format("truncated container".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        Ok(self
            .take(n * 4)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    fn text(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|e| DvError::Format(e.to_string()))
    }
}

/// Serialises any row-major matrix with the frame metadata block.
pub fn encode_matrix(rows: usize, cols: usize, data: &[f64], subject: &str, clip: &str) -> Vec<u8> {
    let mut buf = Vec::with_capacity(16 + data.len() * 4);
    buf.extend_from_slice(FRAME_MAGIC);
    put_u32(&mut buf, rows as u32);
    put_u32(&mut buf, cols as u32);
    for &v in data {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
    let meta = format!("subject={subject}\nclip={clip}\n");
    put_u32(&mut buf, meta.len() as u32);
    buf.extend_from_slice(meta.as_bytes());
    buf
}

pub fn encode_frame(frame: &SpeechFrame) -> Vec<u8> {
    encode_matrix(frame.rows, frame.cols, &frame.data, &frame.source_id, &frame.clip_id)
}

pub fn decode_frame(bytes: &[u8]) -> Result<SpeechFrame> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4)? != FRAME_MAGIC {
        return Err(DvError::Format("bad DVFR magic".into()));
    }
    let rows = r.u32()? as usize;
    let cols = r.u32()? as usize;
    let data = r.f32s(rows * cols)?.into_iter().map(f64::from).collect();
    let meta = r.text()?;
    let field = |key: &str| {
        meta.lines()
            .find_map(|l| l.strip_prefix(key).and_then(|v| v.strip_prefix('=')))
            .unwrap_or_default()
            .to_owned()
    };
    SpeechFrame::new(data, rows, cols, field("subject"), field("clip"))
}

pub fn encode_embedding(values: &[f32], provenance: &str) -> Vec<u8> {
    let mut buf = Vec::with_capacity(12 + values.len() * 4 + provenance.len());
    buf.extend_from_slice(EMBEDDING_MAGIC);
    put_u32(&mut buf, values.len() as u32);
    for &v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    put_u32(&mut buf, provenance.len() as u32);
    buf.extend_from_slice(provenance.as_bytes());
    buf
}

pub fn decode_embedding(bytes: &[u8]) -> Result<(Vec<f32>, String)> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4)? != EMBEDDING_MAGIC {
        return Err(DvError::Format("bad DVEM magic".into()));
    }
    let dim = r.u32()? as usize;
    let values = r.f32s(dim)?;
    Ok((values, r.text()?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn frame_roundtrip(rows in 1usize..6, cols in 1usize..6, subject in "[a-z0-9_]{0,8}", clip in "[a-z0-9#]{0,8}") {
            let data: Vec<f64> = (0..rows * cols).map(|i| (i as f32 * 0.37 - 1.0) as f64).collect();
            let f = SpeechFrame::new(data, rows, cols, subject, clip).unwrap();
            prop_assert_eq!(decode_frame(&encode_frame(&f)).unwrap(), f);
        }
    }

    #[test]
    fn header_layout() {
        let f = SpeechFrame::new(vec![1.0, 2.0], 1, 2, "spk", "c0").unwrap();
        let b = encode_frame(&f);
        assert_eq!(&b[..4], b"DVFR");
        assert_eq!(u32::from_le_bytes(b[4..8].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(b[8..12].try_into().unwrap()), 2);
        assert_eq!(f32::from_le_bytes(b[16..20].try_into().unwrap()), 2.0);
        let e = encode_embedding(&[0.5, -1.0], "utt7");
        assert_eq!(&e[..4], b"DVEM");
        assert_eq!(decode_embedding(&e).unwrap(), (vec![0.5, -1.0], "utt7".to_string()));
        assert!(decode_frame(&e).is_err());
    }
}
