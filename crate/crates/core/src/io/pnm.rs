use std::path::Path;

use ndarray::{Array2, Array3, ArrayView3};

use super::{read_bytes, write_bytes};
use crate::error::{CoreError, Result};
use crate::motion::OcclusionMask;
use crate::scalar::Real;

fn format_err(message: impl Into<String>) -> CoreError {
    CoreError::Format {
        kind: "pnm",
        message: message.into(),
    }
}

fn to_byte<T: Real>(v: T) -> u8 {
    (v.as_f64().clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Encodes a `[C, H, W]` frame with `C = 1` as P5 or `C = 3` as P6.
pub fn encode_pnm<T: Real>(frame: ArrayView3<T>) -> Result<Vec<u8>> {
    let (c, h, w) = frame.dim();
    let magic = match c {
        1 => "P5",
        3 => "P6",
        _ => return Err(CoreError::InvalidArgument(format!("cannot encode {c} channels as PNM"))),
    };
    let mut out = format!("{magic}\n{w} {h}\n255\n").into_bytes();
    out.reserve(c * h * w);
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                out.push(to_byte(frame[[ch, y, x]]));
            }
        }
    }
    Ok(out)
}

struct Header {
    channels: usize,
    width: usize,
    height: usize,
    offset: usize,
}

fn parse_header(bytes: &[u8]) -> Result<Header> {
    let channels = match bytes.get(0..2) {
        Some(b"P5") => 1,
        Some(b"P6") => 3,
        _ => return Err(format_err("expected P5 or P6 magic")),
    };
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in &mut fields {
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(_) => break,
                None => return Err(format_err("truncated header")),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| format_err("malformed header field"))?;
    }
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(format_err("missing separator after header"));
    }
    let [width, height, maxval] = fields;
    if maxval != 255 {
        return Err(format_err(format!("unsupported maxval {maxval}")));
    }
    if width == 0 || height == 0 {
        return Err(format_err("zero-sized image"));
    }
    Ok(Header {
        channels,
        width,
        height,
        offset: pos + 1,
    })
}

pub fn decode_pnm<T: Real>(bytes: &[u8]) -> Result<Array3<T>> {
    let hd = parse_header(bytes)?;
    let body = &bytes[hd.offset..];
    let n = hd.channels * hd.width * hd.height;
    if body.len() != n {
        return Err(format_err(format!("expected {n} pixel bytes, found {}", body.len())));
    }
    Ok(Array3::from_shape_fn((hd.channels, hd.height, hd.width), |(c, y, x)| {
        T::lit(body[(y * hd.width + x) * hd.channels + c] as f64 / 255.0)
    }))
}

/// Masks are stored as P5 with 0 for occluded and 255 for valid pixels.
pub fn encode_mask_pgm(mask: &OcclusionMask) -> Vec<u8> {
    let (h, w) = (mask.height(), mask.width());
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.extend(mask.data().iter().map(|&v| if v != 0 { 255 } else { 0 }));
    out
}

pub fn write_pnm<T: Real>(path: &Path, frame: ArrayView3<T>) -> Result<()> {
    write_bytes(path, &encode_pnm(frame)?)
}

pub fn read_pnm<T: Real>(path: &Path) -> Result<Array3<T>> {
    decode_pnm(&read_bytes(path)?)
}

pub fn write_mask_pgm(path: &Path, mask: &OcclusionMask) -> Result<()> {
    write_bytes(path, &encode_mask_pgm(mask))
}

pub fn read_mask_pgm(path: &Path) -> Result<OcclusionMask> {
    let bytes = read_bytes(path)?;
    let hd = parse_header(&bytes)?;
    if hd.channels != 1 {
        return Err(format_err("mask must be single-channel P5"));
    }
    let body = &bytes[hd.offset..];
    if body.len() != hd.width * hd.height {
        return Err(format_err("truncated mask body"));
    }
    let data = Array2::from_shape_fn((hd.height, hd.width), |(y, x)| u8::from(body[y * hd.width + x] >= 128));
    OcclusionMask::new(data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rgb_round_trip_on_byte_grid() {
        let frame = Array3::from_shape_fn((3, 5, 7), |(c, y, x)| ((c * 35 + y * 7 + x) * 2) as f64 / 255.0);
        let bytes = encode_pnm(frame.view()).unwrap();
        assert!(bytes.starts_with(b"P6\n7 5\n255\n"));
        let back: Array3<f64> = decode_pnm(&bytes).unwrap();
        for (a, b) in back.iter().zip(frame.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn gray_round_trip_and_comments() {
        let frame = Array3::from_shape_fn((1, 2, 3), |(_, y, x)| (y * 3 + x) as f32 / 5.0);
        let bytes = encode_pnm(frame.view()).unwrap();
        let back: Array3<f32> = decode_pnm(&bytes).unwrap();
        for (a, b) in back.iter().zip(frame.iter()) {
            assert!((a - b).abs() <= 0.5 / 255.0 + 1e-6);
        }
        let commented = b"P5\n# note\n2 1\n255\n\x00\xff";
        let img: Array3<f32> = decode_pnm(commented).unwrap();
        assert_eq!(img.as_slice().unwrap(), &[0.0, 1.0]);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(decode_pnm::<f32>(b"P3\n1 1\n255\n0").is_err());
        assert!(decode_pnm::<f32>(b"P5\n2 2\n255\n\x00").is_err());
        assert!(decode_pnm::<f32>(b"P5\n1 1\n65535\n\x00\x00").is_err());
        let frame = Array3::<f32>::zeros((2, 1, 1));
        assert!(encode_pnm(frame.view()).is_err());
    }

    #[test]
    fn mask_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.pgm");
        let mask = OcclusionMask::new(Array2::from_shape_fn((3, 4), |(y, x)| u8::from((x + y) % 2 == 0))).unwrap();
        write_mask_pgm(&path, &mask).unwrap();
        assert_eq!(read_mask_pgm(&path).unwrap(), mask);
    }
}
