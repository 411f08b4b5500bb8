//! Per-frame resampling and filtering on `[C, H, W]` arrays.

use ndarray::{Array2, Array3, ArrayView2, ArrayView3, Axis};

use crate::error::{CoreError, Result};
use crate::scalar::Real;

/// Rec. 601 luma for RGB frames; single-channel frames pass through.
pub fn luminance<T: Real>(frame: ArrayView3<'_, T>) -> Result<Array2<T>> {
    match frame.dim().0 {
        1 => Ok(frame.index_axis(Axis(0), 0).to_owned()),
        3 => {
            let (r, g, b) = (
                frame.index_axis(Axis(0), 0),
                frame.index_axis(Axis(0), 1),
                frame.index_axis(Axis(0), 2),
            );
            let (kr, kg, kb) = (T::lit(0.299), T::lit(0.587), T::lit(0.114));
            Ok(ndarray::Zip::from(&r)
                .and(&g)
                .and(&b)
                .map_collect(|&r, &g, &b| kr * r + kg * g + kb * b))
        }
        c => Err(CoreError::InvalidArgument(format!(
            "expected 1 or 3 channels, got {c}"
        ))),
    }
}

/// Mean over non-overlapping `factor × factor` blocks.
pub fn area_downsample2<T: Real>(img: ArrayView2<'_, T>, factor: usize) -> Result<Array2<T>> {
    let (h, w) = img.dim();
    if factor == 0 || h % factor != 0 || w % factor != 0 {
        return Err(CoreError::InvalidArgument(format!(
            "factor {factor} does not divide {h}x{w}"
        )));
    }
    let norm = T::one() / T::from_usize_lossy(factor * factor);
    Ok(Array2::from_shape_fn((h / factor, w / factor), |(y, x)| {
        let mut acc = T::zero();
        for dy in 0..factor {
            for dx in 0..factor {
                acc += img[[y * factor + dy, x * factor + dx]];
            }
        }
        acc * norm
    }))
}

pub fn area_downsample<T: Real>(frame: ArrayView3<'_, T>, factor: usize) -> Result<Array3<T>> {
    let (c, h, w) = frame.dim();
    if factor == 0 || h % factor != 0 || w % factor != 0 {
        return Err(CoreError::InvalidArgument(format!(
            "factor {factor} does not divide {h}x{w}"
        )));
    }
    let mut out = Array3::zeros((c, h / factor, w / factor));
    for ch in 0..c {
        out.index_axis_mut(Axis(0), ch)
            .assign(&area_downsample2(frame.index_axis(Axis(0), ch), factor)?);
    }
    Ok(out)
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as isize;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

/// Separable Gaussian blur with radius `ceil(3σ)` and clamp-to-edge borders.
/// `sigma == 0` returns the input unchanged.
pub fn gaussian_blur<T: Real>(frame: ArrayView3<'_, T>, sigma: f64) -> Array3<T> {
    if sigma <= 0.0 {
        return frame.to_owned();
    }
    let k: Vec<T> = gaussian_kernel(sigma).into_iter().map(T::lit).collect();
    let r = (k.len() / 2) as isize;
    let (c, h, w) = frame.dim();
    let mut tmp = Array3::<T>::zeros((c, h, w));
    for ch in 0..c {
        for y in 0..h {
            for x in 0..w {
                let mut acc = T::zero();
                for (j, kv) in k.iter().enumerate() {
                    let xx = (x as isize + j as isize - r).clamp(0, w as isize - 1) as usize;
                    acc += *kv * frame[[ch, y, xx]];
                }
                tmp[[ch, y, x]] = acc;
            }
        }
    }
    let mut out = Array3::<T>::zeros((c, h, w));
    for ch in 0..c {
        for y in 0..h {
            for x in 0..w {
                let mut acc = T::zero();
                for (j, kv) in k.iter().enumerate() {
                    let yy = (y as isize + j as isize - r).clamp(0, h as isize - 1) as usize;
                    acc += *kv * tmp[[ch, yy, x]];
                }
                out[[ch, y, x]] = acc;
            }
        }
    }
    out
}

fn cubic_weight(d: f64) -> f64 {
    // Keys kernel, a = -0.5
    let a = -0.5;
    let d = d.abs();
    if d <= 1.0 {
        (a + 2.0) * d * d * d - (a + 3.0) * d * d + 1.0
    } else if d < 2.0 {
        a * d * d * d - 5.0 * a * d * d + 8.0 * a * d - 4.0 * a
    } else {
        0.0
    }
}

fn resize_axis_weights(src: usize, dst: usize) -> Vec<[(usize, f64); 4]> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|o| {
            let centre = (o as f64 + 0.5) * scale - 0.5;
            let base = centre.floor();
            let mut taps = [(0usize, 0.0f64); 4];
            for (j, tap) in taps.iter_mut().enumerate() {
                let pos = base + j as f64 - 1.0;
                let idx = (pos as isize).clamp(0, src as isize - 1) as usize;
                *tap = (idx, cubic_weight(centre - pos));
            }
            taps
        })
        .collect()
}

/// Bicubic resize (Keys, a = −0.5) with half-pixel centres and edge clamping.
pub fn resize_bicubic<T: Real>(frame: ArrayView3<'_, T>, out_h: usize, out_w: usize) -> Array3<T> {
    let (c, h, w) = frame.dim();
    let wx = resize_axis_weights(w, out_w);
    let wy = resize_axis_weights(h, out_h);
    let mut tmp = Array3::<f64>::zeros((c, h, out_w));
    for ch in 0..c {
        for y in 0..h {
            for (x, taps) in wx.iter().enumerate() {
                tmp[[ch, y, x]] = taps
                    .iter()
                    .map(|&(i, wt)| wt * frame[[ch, y, i]].as_f64())
                    .sum();
            }
        }
    }
    Array3::from_shape_fn((c, out_h, out_w), |(ch, y, x)| {
        T::lit(wy[y].iter().map(|&(i, wt)| wt * tmp[[ch, i, x]]).sum())
    })
}

/// 3×3 Sobel responses with clamp-to-edge borders; returns `(gx, gy)`.
pub fn sobel<T: Real>(img: ArrayView2<'_, T>) -> (Array2<T>, Array2<T>) {
    let (h, w) = img.dim();
    let at = |y: isize, x: isize| {
        img[[
            y.clamp(0, h as isize - 1) as usize,
            x.clamp(0, w as isize - 1) as usize,
        ]]
    };
    let two = T::lit(2.0);
    let gx = Array2::from_shape_fn((h, w), |(y, x)| {
        let (y, x) = (y as isize, x as isize);
        (at(y - 1, x + 1) + two * at(y, x + 1) + at(y + 1, x + 1))
            - (at(y - 1, x - 1) + two * at(y, x - 1) + at(y + 1, x - 1))
    });
    let gy = Array2::from_shape_fn((h, w), |(y, x)| {
        let (y, x) = (y as isize, x as isize);
        (at(y + 1, x - 1) + two * at(y + 1, x) + at(y + 1, x + 1))
            - (at(y - 1, x - 1) + two * at(y - 1, x) + at(y - 1, x + 1))
    });
    (gx, gy)
}
