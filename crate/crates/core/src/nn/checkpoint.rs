//! Versioned binary checkpoint.
//!
//! Layout: magic `BFIKI\0`, `u32` version, then for each tensor in sorted-name
//! order: `u32` name length, UTF-8 name, `u32` rank, `rank` x `u32` dims,
//! `prod(dims)` x `f32` values. All integers and floats little-endian.

use std::collections::BTreeMap;
use std::path::Path;

use thiserror::Error;

use super::{Real, Tensor};

pub const MAGIC: &[u8; 6] = b"BFIKI\0";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("not a checkpoint (bad magic)")]
    BadMagic,
    #[error("checkpoint version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("checkpoint truncated")]
    Truncated,
    #[error("checkpoint is malformed: {0}")]
    Malformed(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub fn encode<T: Real>(tensors: &BTreeMap<String, Tensor<T>>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    for (name, t) in tensors {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in t.data() {
            out.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
        }
    }
    out
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        let end = self.pos.checked_add(n).ok_or(CheckpointError::Truncated)?;
        let s = self.buf.get(self.pos..end).ok_or(CheckpointError::Truncated)?;
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

pub fn decode(buf: &[u8]) -> Result<BTreeMap<String, Tensor<f32>>, CheckpointError> {
    if buf.len() < MAGIC.len() || &buf[..MAGIC.len()] != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let mut cur = Cursor {
        buf,
        pos: MAGIC.len(),
    };
    let version = cur.u32()?;
    if version != VERSION {
        return Err(CheckpointError::VersionMismatch {
            found: version,
            expected: VERSION,
        });
    }
    let mut out = BTreeMap::new();
    while cur.pos < buf.len() {
        let name_len = cur.u32()? as usize;
        let name = std::str::from_utf8(cur.take(name_len)?)
            .map_err(|_| CheckpointError::Malformed("parameter name is not UTF-8".into()))?
            .to_string();
        let rank = cur.u32()? as usize;
        if rank > 8 {
            return Err(CheckpointError::Malformed(format!("rank {rank} for {name}")));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(cur.u32()? as usize);
        }
        let n = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| CheckpointError::Malformed(format!("shape overflow for {name}")))?;
        let bytes = cur.take(n.checked_mul(4).ok_or(CheckpointError::Truncated)?)?;
        let data = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let t = Tensor::from_vec(&shape, data).map_err(|e| CheckpointError::Malformed(e.to_string()))?;
        out.insert(name, t);
    }
    Ok(out)
}

pub fn save<T: Real>(path: &Path, tensors: &BTreeMap<String, Tensor<T>>) -> Result<(), CheckpointError> {
    std::fs::write(path, encode(tensors))?;
    Ok(())
}

pub fn load(path: &Path) -> Result<BTreeMap<String, Tensor<f32>>, CheckpointError> {
    decode(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> BTreeMap<String, Tensor<f32>> {
        let mut m = BTreeMap::new();
        m.insert("b.bias".to_string(), Tensor::from_vec(&[2], vec![0.5, -1.25]).unwrap());
        m.insert("a.weight".to_string(), Tensor::from_vec(&[2, 1, 3], (0..6).map(|v| v as f32 / 3.0).collect()).unwrap());
        m
    }

    #[test]
    fn round_trip_and_layout() {
        let bytes = encode(&sample());
        assert_eq!(&bytes[..6], b"BFIKI\0");
        assert_eq!(&bytes[6..10], &1u32.to_le_bytes());
        // sorted: "a.weight" comes first
        assert_eq!(&bytes[10..14], &8u32.to_le_bytes());
        assert_eq!(&bytes[14..22], b"a.weight");
        assert_eq!(decode(&bytes).unwrap(), sample());
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(decode(b"NOPE"), Err(CheckpointError::BadMagic)));
        let mut bytes = encode(&sample());
        bytes[6] = 9;
        assert!(matches!(
            decode(&bytes),
            Err(CheckpointError::VersionMismatch { found: 9, expected: 1 })
        ));
        let bytes = encode(&sample());
        assert!(matches!(decode(&bytes[..bytes.len() - 1]), Err(CheckpointError::Truncated)));
    }
}
