//! Versioned container of named `f32` tensors.
//!
//! Layout, little-endian: 8-byte magic, `u32` version, `u32` tensor count,
//! then per tensor `u32` name length, UTF-8 name, `u32` rank, `i32` dims,
//! `f32` data in row-major order. A trailing `u64` FNV-1a hash covers every
//! preceding byte.

use std::hash::Hasher;
use std::path::Path;

use fnv::FnvHasher;
use ndarray::{ArrayD, IxDyn};

use super::{read_bytes, write_bytes};
use crate::error::{CoreError, Result};

pub const ARCHIVE_MAGIC: &[u8; 8] = b"FGTENSR\0";
pub const ARCHIVE_VERSION: u32 = 1;

fn format_err(message: impl Into<String>) -> CoreError {
    CoreError::Format {
        kind: "archive",
        message: message.into(),
    }
}

/// Named tensors kept in insertion order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TensorArchive {
    entries: Vec<(String, ArrayD<f32>)>,
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| format_err("truncated archive"))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn i32(&mut self) -> Result<i32> {
        Ok(i32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

fn checksum(bytes: &[u8]) -> u64 {
    let mut h = FnvHasher::default();
    h.write(bytes);
    h.finish()
}

impl TensorArchive {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds or replaces a tensor.
    pub fn insert(&mut self, name: impl Into<String>, tensor: ArrayD<f32>) {
        let name = name.into();
        match self.entries.iter_mut().find(|(n, _)| *n == name) {
            Some(slot) => slot.1 = tensor,
            None => self.entries.push((name, tensor)),
        }
    }

    pub fn get(&self, name: &str) -> Option<&ArrayD<f32>> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    /// Fetches a tensor and checks its shape.
    pub fn expect(&self, name: &str, shape: &[usize]) -> Result<&ArrayD<f32>> {
        let t = self
            .get(name)
            .ok_or_else(|| format_err(format!("missing tensor '{name}'")))?;
        if t.shape() != shape {
            return Err(CoreError::Shape {
                expected: shape.to_vec(),
                actual: t.shape().to_vec(),
            });
        }
        Ok(t)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(n, _)| n.as_str())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &ArrayD<f32>)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(ARCHIVE_MAGIC);
        out.extend_from_slice(&ARCHIVE_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for (name, t) in &self.entries {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.ndim() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as i32).to_le_bytes());
            }
            for &v in t.iter() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let sum = checksum(&out);
        out.extend_from_slice(&sum.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 24 {
            return Err(format_err("truncated archive"));
        }
        let (body, tail) = bytes.split_at(bytes.len() - 8);
        if checksum(body) != u64::from_le_bytes(tail.try_into().unwrap()) {
            return Err(format_err("checksum mismatch"));
        }
        let mut r = Reader { bytes: body, pos: 0 };
        if r.take(8)? != ARCHIVE_MAGIC {
            return Err(format_err("bad magic"));
        }
        let version = r.u32()?;
        if version != ARCHIVE_VERSION {
            return Err(format_err(format!("unsupported version {version}")));
        }
        let count = r.u32()? as usize;
        let mut archive = Self::new();
        for _ in 0..count {
            let len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(len)?)
                .map_err(|_| format_err("tensor name is not UTF-8"))?
                .to_string();
            let rank = r.u32()? as usize;
            let mut dims = Vec::with_capacity(rank);
            for _ in 0..rank {
                let d = r.i32()?;
                if d < 0 {
                    return Err(format_err(format!("negative dimension in '{name}'")));
                }
                dims.push(d as usize);
            }
            let n: usize = dims.iter().product();
            let raw = r.take(n.checked_mul(4).ok_or_else(|| format_err("tensor too large"))?)?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            let t = ArrayD::from_shape_vec(IxDyn(&dims), data).map_err(|e| format_err(e.to_string()))?;
            archive.insert(name, t);
        }
        if r.pos != body.len() {
            return Err(format_err("trailing bytes after last tensor"));
        }
        Ok(archive)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_bytes(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&read_bytes(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array;

    fn sample() -> TensorArchive {
        let mut a = TensorArchive::new();
        a.insert("encoder.conv_in.weight", Array::from_shape_fn(IxDyn(&[2, 3, 3, 3]), |i| i[0] as f32 - i[3] as f32 * 0.5));
        a.insert("scale", ArrayD::from_elem(IxDyn(&[]), 0.25));
        a
    }

    #[test]
    fn round_trip_preserves_order_and_values() {
        let a = sample();
        let b = TensorArchive::from_bytes(&a.to_bytes()).unwrap();
        assert_eq!(a, b);
        assert_eq!(b.names().collect::<Vec<_>>(), ["encoder.conv_in.weight", "scale"]);
        assert!(b.expect("scale", &[]).is_ok());
        assert!(b.expect("scale", &[1]).is_err());
        assert!(b.expect("absent", &[]).is_err());
    }

    #[test]
    fn detects_corruption() {
        let bytes = sample().to_bytes();
        for i in [0, 9, 20, bytes.len() / 2, bytes.len() - 1] {
            let mut bad = bytes.clone();
            bad[i] ^= 0x10;
            assert!(TensorArchive::from_bytes(&bad).is_err(), "flip at {i}");
        }
        assert!(TensorArchive::from_bytes(&bytes[..bytes.len() - 3]).is_err());
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.ckpt");
        sample().save(&path).unwrap();
        assert_eq!(TensorArchive::load(&path).unwrap(), sample());
        assert!(TensorArchive::load(&dir.path().join("none")).is_err());
    }
}
