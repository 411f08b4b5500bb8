use std::path::Path;

use ndarray::Array3;

use super::{read_bytes, write_bytes};
use crate::error::{CoreError, Result};
use crate::motion::FlowField;
use crate::scalar::Real;

pub const FLO_MAGIC: f32 = 202021.25;

fn format_err(message: impl Into<String>) -> CoreError {
    CoreError::Format {
        kind: "flo",
        message: message.into(),
    }
}

pub fn encode_flo<T: Real>(flow: &FlowField<T>) -> Vec<u8> {
    let (h, w) = (flow.height(), flow.width());
    let mut out = Vec::with_capacity(12 + 8 * h * w);
    out.extend_from_slice(&FLO_MAGIC.to_le_bytes());
    out.extend_from_slice(&(w as i32).to_le_bytes());
    out.extend_from_slice(&(h as i32).to_le_bytes());
    let d = flow.data();
    for y in 0..h {
        for x in 0..w {
            out.extend_from_slice(&(d[[0, y, x]].as_f64() as f32).to_le_bytes());
            out.extend_from_slice(&(d[[1, y, x]].as_f64() as f32).to_le_bytes());
        }
    }
    out
}

pub fn decode_flo<T: Real>(bytes: &[u8]) -> Result<FlowField<T>> {
    let word = |i: usize| -> Result<[u8; 4]> {
        bytes
            .get(4 * i..4 * i + 4)
            .map(|b| [b[0], b[1], b[2], b[3]])
            .ok_or_else(|| format_err("truncated header"))
    };
    if f32::from_le_bytes(word(0)?) != FLO_MAGIC {
        return Err(format_err("bad magic"));
    }
    let w = i32::from_le_bytes(word(1)?);
    let h = i32::from_le_bytes(word(2)?);
    if w <= 0 || h <= 0 {
        return Err(format_err(format!("invalid dimensions {w}x{h}")));
    }
    let (w, h) = (w as usize, h as usize);
    let expected = 12 + 8 * w * h;
    if bytes.len() != expected {
        return Err(format_err(format!("expected {expected} bytes, found {}", bytes.len())));
    }
    let mut data = Array3::<T>::zeros((2, h, w));
    for (i, chunk) in bytes[12..].chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]);
        let (pix, c) = (i / 2, i % 2);
        data[[c, pix / w, pix % w]] = T::lit(v as f64);
    }
    FlowField::new(data)
}

pub fn write_flo<T: Real>(path: &Path, flow: &FlowField<T>) -> Result<()> {
    write_bytes(path, &encode_flo(flow))
}

pub fn read_flo<T: Real>(path: &Path) -> Result<FlowField<T>> {
    decode_flo(&read_bytes(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_layout() {
        let flow = FlowField::<f32>::constant(2, 3, 1.5, -0.25);
        let bytes = encode_flo(&flow);
        assert_eq!(bytes.len(), 12 + 8 * 6);
        assert_eq!(&bytes[0..4], b"PIEH");
        assert_eq!(i32::from_le_bytes(bytes[4..8].try_into().unwrap()), 3);
        assert_eq!(i32::from_le_bytes(bytes[8..12].try_into().unwrap()), 2);
        assert_eq!(f32::from_le_bytes(bytes[12..16].try_into().unwrap()), 1.5);
        assert_eq!(f32::from_le_bytes(bytes[16..20].try_into().unwrap()), -0.25);
    }

    #[test]
    fn round_trip_is_exact_for_f32() {
        let data = Array3::from_shape_fn((2, 4, 5), |(c, y, x)| (c as f32 - 0.5) * (y * 5 + x) as f32 / 7.0);
        let flow = FlowField::new(data).unwrap();
        let back: FlowField<f32> = decode_flo(&encode_flo(&flow)).unwrap();
        assert_eq!(back, flow);
    }

    #[test]
    fn rejects_corrupt_input() {
        let flow = FlowField::<f32>::zeros(2, 2);
        let mut bytes = encode_flo(&flow);
        bytes[0] ^= 1;
        assert!(decode_flo::<f32>(&bytes).is_err());
        let bytes = encode_flo(&flow);
        assert!(decode_flo::<f32>(&bytes[..bytes.len() - 1]).is_err());
        assert!(decode_flo::<f32>(&bytes[..6]).is_err());
    }
}
