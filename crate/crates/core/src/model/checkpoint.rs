//! Parameter checkpoints.
//!
//! Layout (little-endian):
//!
//! ```text
//! "WSCK"  u32 version=1  u32 count
//! count × { u32 name_len  name (UTF-8)  u32 rank  rank × u32 dim  Π dims × f64 }
//! ```

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"WSCK";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn encode_checkpoint(entries: &[(String, Tensor)]) -> Vec<u8> {
    let mut buf = Vec::new();
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for (name, t) in entries {
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.extend_from_slice(&(t.rank() as u32).to_le_bytes());
        for &d in t.shape() {
            buf.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in t.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    buf
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let end = self.pos.checked_add(n)?;
        let s = self.bytes.get(self.pos..end)?;
        self.pos = end;
        Some(s)
    }

    fn u32(&mut self) -> Option<usize> {
        self.take(4).map(|b| u32::from_le_bytes(b.try_into().unwrap()) as usize)
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> std::result::Result<Vec<(String, Tensor)>, String> {
    let mut c = Cursor { bytes, pos: 0 };
    if c.take(4) != Some(CHECKPOINT_MAGIC.as_slice()) {
        return Err("missing WSCK header".into());
    }
    let truncated = || "truncated".to_string();
    let version = c.u32().ok_or_else(truncated)?;
    if version != CHECKPOINT_VERSION as usize {
        return Err(format!("unsupported version {version}"));
    }
    let count = c.u32().ok_or_else(truncated)?;
    let mut out = Vec::new();
    for _ in 0..count {
        let n = c.u32().ok_or_else(truncated)?;
        let name = std::str::from_utf8(c.take(n).ok_or_else(truncated)?)
            .map_err(|_| "parameter name is not UTF-8".to_string())?
            .to_string();
        let rank = c.u32().ok_or_else(truncated)?;
        let shape = (0..rank).map(|_| c.u32().ok_or_else(truncated)).collect::<std::result::Result<Vec<_>, _>>()?;
        let len: usize = shape.iter().product();
        let raw = c.take(len.checked_mul(8).ok_or_else(truncated)?).ok_or_else(truncated)?;
        let data = raw.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().unwrap())).collect();
        out.push((name, Tensor::new(shape, data).map_err(|e| e.to_string())?));
    }
    if c.pos != bytes.len() {
        return Err("trailing bytes".into());
    }
    Ok(out)
}

pub fn write_checkpoint(path: impl AsRef<Path>, entries: &[(String, Tensor)]) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_checkpoint(entries)).map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<Vec<(String, Tensor)>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes).map_err(|msg| Error::Format { path: path.into(), msg })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_corruption() {
        let entries = vec![
            ("a.w".to_string(), Tensor::new(vec![2, 3], vec![1.0, -2.5, 3.0, f64::MIN_POSITIVE, 0.0, 1e300]).unwrap()),
            ("b".to_string(), Tensor::scalar(0.25)),
        ];
        let bytes = encode_checkpoint(&entries);
        assert_eq!(&bytes[..4], b"WSCK");
        assert_eq!(decode_checkpoint(&bytes).unwrap(), entries);
        assert!(decode_checkpoint(&bytes[..bytes.len() - 1]).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(decode_checkpoint(&extra).is_err());
        assert!(decode_checkpoint(b"WSMF").is_err());
    }
}
