//! Feature cache files.
//!
//! Layout (little-endian):
//!
//! ```text
//! "WSMF"  u32 version=1  u32 T  u32 F  T·F × f32 (row-major by frame)
//! ```

use std::fs;
use std::io::Write;
use std::path::Path;

use super::FeatureMatrix;
use crate::error::{Error, Result};

pub const FEATURE_MAGIC: &[u8; 4] = b"WSMF";
pub const FEATURE_VERSION: u32 = 1;

pub fn write_features(path: impl AsRef<Path>, features: &FeatureMatrix) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::with_capacity(16 + features.data().len() * 4);
    buf.extend_from_slice(FEATURE_MAGIC);
    buf.extend_from_slice(&FEATURE_VERSION.to_le_bytes());
    buf.extend_from_slice(&(features.frames() as u32).to_le_bytes());
    buf.extend_from_slice(&(features.bands() as u32).to_le_bytes());
    for &v in features.data() {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

/// Reads a feature file. The id and hop are not stored in the file and are
/// supplied by the caller.
pub fn read_features(path: impl AsRef<Path>, id: &str, hop_seconds: f64) -> Result<FeatureMatrix> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = |msg: &str| Error::Format {
        path: path.into(),
        msg: msg.into(),
    };
    if bytes.len() < 16 || &bytes[..4] != FEATURE_MAGIC {
        return Err(bad("missing WSMF header"));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
    if word(4) != FEATURE_VERSION {
        return Err(bad(&format!("unsupported version {}", word(4))));
    }
    let (t, f) = (word(8) as usize, word(12) as usize);
    if bytes.len() != 16 + t * f * 4 {
        return Err(bad("payload length does not match T·F"));
    }
    let data = bytes[16..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    FeatureMatrix::new(id, t, f, data, hop_seconds)
}

/// Debug export: one row per frame, header `frame,b0,b1,...`.
pub fn write_features_csv(path: impl AsRef<Path>, features: &FeatureMatrix) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::from("frame");
    for b in 0..features.bands() {
        out.push_str(&format!(",b{b}"));
    }
    out.push('\n');
    for t in 0..features.frames() {
        out.push_str(&t.to_string());
        for v in features.row(t) {
            out.push_str(&format!(",{v}"));
        }
        out.push('\n');
    }
    fs::File::create(path)
        .and_then(|mut f| f.write_all(out.as_bytes()))
        .map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_layout_and_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.wsmf");
        let m = FeatureMatrix::new("x", 2, 3, vec![0.5, -1.25, 3.0, 4.0, 5.5, -23.0], 0.0115).unwrap();
        write_features(&p, &m).unwrap();
        let bytes = fs::read(&p).unwrap();
        assert_eq!(&bytes[..4], b"WSMF");
        assert_eq!(&bytes[4..16], &[1, 0, 0, 0, 2, 0, 0, 0, 3, 0, 0, 0]);
        assert_eq!(bytes.len(), 16 + 6 * 4);
        let back = read_features(&p, "x", 0.0115).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn truncated_file_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.wsmf");
        fs::write(&p, b"WSMF\x01\0\0\0\x02\0\0\0\x02\0\0\0\0\0").unwrap();
        assert!(matches!(read_features(&p, "bad", 0.01), Err(Error::Format { .. })));
    }
}
