//! Straightforward loop implementations used as references.
#![allow(dead_code)]

use ndarray::{Array2, Array3, Array4};

/// Bilinear sample at `(y, x)` with the position clamped to the image.
pub fn sample(img: &Array3<f64>, c: usize, y: f64, x: f64) -> f64 {
    let (_, h, w) = img.dim();
    let x = x.clamp(0.0, (w - 1) as f64);
    let y = y.clamp(0.0, (h - 1) as f64);
    let (x0, y0) = (x.floor() as usize, y.floor() as usize);
    let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
    let (ax, ay) = (x - x0 as f64, y - y0 as f64);
    let top = img[[c, y0, x0]] * (1.0 - ax) + img[[c, y0, x1]] * ax;
    let bottom = img[[c, y1, x0]] * (1.0 - ax) + img[[c, y1, x1]] * ax;
    top * (1.0 - ay) + bottom * ay
}

/// `flow` is `[2, H, W]` holding `(dx, dy)`.
pub fn warp(img: &Array3<f64>, flow: &Array3<f64>) -> Array3<f64> {
    let (c, h, w) = img.dim();
    let mut out = Array3::zeros((c, h, w));
    for ch in 0..c {
        for y in 0..h {
            for x in 0..w {
                out[[ch, y, x]] = sample(img, ch, y as f64 + flow[[1, y, x]], x as f64 + flow[[0, y, x]]);
            }
        }
    }
    out
}

fn frame(v: &Array4<f64>, i: usize) -> Array3<f64> {
    v.index_axis(ndarray::Axis(0), i).to_owned()
}

fn rho(r: f64, eps: f64) -> f64 {
    (r * r + eps * eps).sqrt() - eps
}

pub fn energy(
    z: &Array4<f64>,
    fwd: &[Array3<f64>],
    bwd: &[Array3<f64>],
    mf: &[Array2<u8>],
    mb: &[Array2<u8>],
    eps: f64,
) -> f64 {
    let (n, c, h, w) = z.dim();
    let mut total = 0.0;
    for i in 0..n - 1 {
        let warped = warp(&frame(z, i), &bwd[i]);
        for ch in 0..c {
            for y in 0..h {
                for x in 0..w {
                    if mb[i][[y, x]] == 1 {
                        total += rho(warped[[ch, y, x]] - z[[i + 1, ch, y, x]], eps);
                    }
                }
            }
        }
    }
    for i in 1..n {
        let warped = warp(&frame(z, i), &fwd[i - 1]);
        for ch in 0..c {
            for y in 0..h {
                for x in 0..w {
                    if mf[i - 1][[y, x]] == 1 {
                        total += rho(warped[[ch, y, x]] - z[[i - 1, ch, y, x]], eps);
                    }
                }
            }
        }
    }
    total
}

/// Mean per-element residual over pairs, ×1e4.
pub fn warping_error(pred: &Array4<f64>, bwd: &[Array3<f64>]) -> f64 {
    let (n, c, h, w) = pred.dim();
    let mut total = 0.0;
    for i in 0..n - 1 {
        let warped = warp(&frame(pred, i), &bwd[i]);
        let mut s = 0.0;
        for ch in 0..c {
            for y in 0..h {
                for x in 0..w {
                    s += (pred[[i + 1, ch, y, x]] - warped[[ch, y, x]]).abs();
                }
            }
        }
        total += s / (c * h * w) as f64;
    }
    total / (n - 1) as f64 * 1e4
}

pub fn frame_diff(pred: &Array4<f64>, gt: &Array4<f64>) -> f64 {
    let (n, c, h, w) = pred.dim();
    let mut total = 0.0;
    for i in 0..n - 1 {
        for ch in 0..c {
            for y in 0..h {
                for x in 0..w {
                    let dp = pred[[i + 1, ch, y, x]] - pred[[i, ch, y, x]];
                    let dg = gt[[i + 1, ch, y, x]] - gt[[i, ch, y, x]];
                    total += (dp - dg).abs();
                }
            }
        }
    }
    total
}

/// `1 + w·S` with `S` the max-normalised Sobel magnitude of the frame's luma.
pub fn structure_weight(img: &Array3<f64>, w_factor: f64) -> Array2<f64> {
    let (c, h, w) = img.dim();
    let luma = Array2::from_shape_fn((h, w), |(y, x)| {
        if c == 1 {
            img[[0, y, x]]
        } else {
            0.299 * img[[0, y, x]] + 0.587 * img[[1, y, x]] + 0.114 * img[[2, y, x]]
        }
    });
    let px = |y: i64, x: i64| luma[[y.clamp(0, h as i64 - 1) as usize, x.clamp(0, w as i64 - 1) as usize]];
    let kx = [[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]];
    let mut mag = Array2::zeros((h, w));
    for y in 0..h as i64 {
        for x in 0..w as i64 {
            let (mut gx, mut gy) = (0.0, 0.0);
            for dy in -1..=1i64 {
                for dx in -1..=1i64 {
                    let v = px(y + dy, x + dx);
                    gx += kx[(dy + 1) as usize][(dx + 1) as usize] * v;
                    gy += kx[(dx + 1) as usize][(dy + 1) as usize] * v;
                }
            }
            mag[[y as usize, x as usize]] = (gx * gx + gy * gy).sqrt();
        }
    }
    let max = mag.iter().cloned().fold(0.0, f64::max);
    mag.mapv(|s| 1.0 + w_factor * if max > 0.0 { s / max } else { 0.0 })
}

fn weighted_term(src: &Array3<f64>, dst: &Array3<f64>, flow: &Array3<f64>, mask: &Array2<u8>, weight: &Array2<f64>) -> f64 {
    let warped = warp(src, flow);
    let (c, h, w) = src.dim();
    let mut s = 0.0;
    for ch in 0..c {
        for y in 0..h {
            for x in 0..w {
                s += f64::from(mask[[y, x]]) * (weight[[y, x]] * (warped[[ch, y, x]] - dst[[ch, y, x]])).abs();
            }
        }
    }
    s
}

/// `aligned` selects `O_f[i−1]` for the forward term instead of `O_f[i]`.
#[allow(clippy::too_many_arguments)]
pub fn swc(
    pred: &Array4<f64>,
    gt: &Array4<f64>,
    fwd: &[Array3<f64>],
    bwd: &[Array3<f64>],
    mf: &[Array2<u8>],
    mb: &[Array2<u8>],
    w_factor: f64,
    aligned: bool,
) -> f64 {
    let n = pred.dim().0;
    let weights: Vec<_> = (0..n).map(|i| structure_weight(&frame(gt, i), w_factor)).collect();
    let mut total = 0.0;
    for i in 0..n - 1 {
        total += weighted_term(&frame(pred, i), &frame(pred, i + 1), &bwd[i], &mb[i], &weights[i + 1]);
    }
    let range = if aligned { 1..n } else { 1..n - 1 };
    for i in range {
        let k = if aligned { i - 1 } else { i };
        total += weighted_term(&frame(pred, i), &frame(pred, i - 1), &fwd[k], &mf[k], &weights[i - 1]);
    }
    total
}

/// Mean SSIM over every 11×11 window position, per-window loop.
pub fn ssim(a: &Array3<f64>, b: &Array3<f64>) -> f64 {
    let (c, h, w) = a.dim();
    let mut g = [[0.0; 11]; 11];
    let mut norm = 0.0;
    for (i, row) in g.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            let (dy, dx) = (i as f64 - 5.0, j as f64 - 5.0);
            *v = (-(dx * dx + dy * dy) / (2.0 * 1.5 * 1.5)).exp();
            norm += *v;
        }
    }
    let (c1, c2) = (0.01f64.powi(2), 0.03f64.powi(2));
    let mut total = 0.0;
    for ch in 0..c {
        let mut acc = 0.0;
        for y0 in 0..=h - 11 {
            for x0 in 0..=w - 11 {
                let (mut mx, mut my, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for i in 0..11 {
                    for j in 0..11 {
                        let k = g[i][j] / norm;
                        let (p, q) = (a[[ch, y0 + i, x0 + j]], b[[ch, y0 + i, x0 + j]]);
                        mx += k * p;
                        my += k * q;
                        sxx += k * p * p;
                        syy += k * q * q;
                        sxy += k * p * q;
                    }
                }
                let (vx, vy, cov) = (sxx - mx * mx, syy - my * my, sxy - mx * my);
                acc += (2.0 * mx * my + c1) * (2.0 * cov + c2) / ((mx * mx + my * my + c1) * (vx + vy + c2));
            }
        }
        total += acc / ((h - 10) * (w - 10)) as f64;
    }
    total / c as f64
}
