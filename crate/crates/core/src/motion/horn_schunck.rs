//! Coarse-to-fine Horn–Schunck flow.
//!
//! Each pyramid level warps the destination frame by the current estimate,
//! linearises brightness constancy around it and runs Jacobi iterations of
//! the Horn–Schunck update on the total flow. Intensities are luminance
//! scaled by `intensity_scale`, so `smoothness` is expressed in 8-bit units.

use ndarray::{Array2, ArrayView3, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{check_shape, Result};
use crate::image_ops::{area_downsample2, luminance};
use crate::motion::{warp_bilinear, FlowField, FlowSet};
use crate::scalar::Real;
use crate::sequence::VideoSequence;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FlowSolverConfig {
    pub levels: usize,
    pub iterations: usize,
    pub smoothness: f64,
    pub intensity_scale: f64,
}

impl Default for FlowSolverConfig {
    fn default() -> Self {
        Self {
            levels: 3,
            iterations: 100,
            smoothness: 15.0,
            intensity_scale: 255.0,
        }
    }
}

fn pyramid(img: Array2<f64>, levels: usize) -> Vec<Array2<f64>> {
    let mut out = vec![img];
    while out.len() < levels.max(1) {
        let last = out.last().expect("non-empty");
        let (h, w) = last.dim();
        if h % 2 != 0 || w % 2 != 0 || h < 8 || w < 8 {
            break;
        }
        let next = area_downsample2(last.view(), 2).expect("even dims");
        out.push(next);
    }
    out
}

fn upsample_flow2(u: &Array2<f64>, h: usize, w: usize) -> Array2<f64> {
    let (sh, sw) = u.dim();
    Array2::from_shape_fn((h, w), |(y, x)| {
        let sy = ((y as f64 + 0.5) * sh as f64 / h as f64 - 0.5).clamp(0.0, (sh - 1) as f64);
        let sx = ((x as f64 + 0.5) * sw as f64 / w as f64 - 0.5).clamp(0.0, (sw - 1) as f64);
        let (y0, x0) = (sy.floor() as usize, sx.floor() as usize);
        let (y1, x1) = ((y0 + 1).min(sh - 1), (x0 + 1).min(sw - 1));
        let (fy, fx) = (sy - y0 as f64, sx - x0 as f64);
        let v = u[[y0, x0]] * (1.0 - fx) * (1.0 - fy)
            + u[[y0, x1]] * fx * (1.0 - fy)
            + u[[y1, x0]] * (1.0 - fx) * fy
            + u[[y1, x1]] * fx * fy;
        v * 2.0
    })
}

fn gradients(img: &Array2<f64>) -> (Array2<f64>, Array2<f64>) {
    let (h, w) = img.dim();
    let gx = Array2::from_shape_fn((h, w), |(y, x)| {
        let l = img[[y, x.saturating_sub(1)]];
        let r = img[[y, (x + 1).min(w - 1)]];
        0.5 * (r - l)
    });
    let gy = Array2::from_shape_fn((h, w), |(y, x)| {
        let t = img[[y.saturating_sub(1), x]];
        let b = img[[(y + 1).min(h - 1), x]];
        0.5 * (b - t)
    });
    (gx, gy)
}

/// Horn–Schunck neighbourhood mean (edges 1/6, corners 1/12), clamped borders.
fn neighbour_mean(u: &Array2<f64>) -> Array2<f64> {
    let (h, w) = u.dim();
    let at = |y: isize, x: isize| u[[y.clamp(0, h as isize - 1) as usize, x.clamp(0, w as isize - 1) as usize]];
    Array2::from_shape_fn((h, w), |(y, x)| {
        let (y, x) = (y as isize, x as isize);
        (at(y - 1, x) + at(y + 1, x) + at(y, x - 1) + at(y, x + 1)) / 6.0
            + (at(y - 1, x - 1) + at(y - 1, x + 1) + at(y + 1, x - 1) + at(y + 1, x + 1)) / 12.0
    })
}

/// Flow on `src`'s grid such that `src(p) ≈ dst(p + flow(p))`.
pub fn estimate_flow<T: Real>(
    src: ArrayView3<'_, T>,
    dst: ArrayView3<'_, T>,
    cfg: &FlowSolverConfig,
) -> Result<FlowField<T>> {
    check_shape(src.shape(), dst.shape())?;
    let scale = cfg.intensity_scale;
    let to_f64 = |a: Array2<T>| a.mapv(|v| v.as_f64() * scale);
    let src_pyr = pyramid(to_f64(luminance(src)?), cfg.levels);
    let dst_pyr = pyramid(to_f64(luminance(dst)?), cfg.levels);
    let alpha2 = cfg.smoothness * cfg.smoothness;

    let mut u: Option<(Array2<f64>, Array2<f64>)> = None;
    for (s, d) in src_pyr.iter().zip(dst_pyr.iter()).rev() {
        let (h, w) = s.dim();
        let (mut fu, mut fv) = match u.take() {
            Some((pu, pv)) => (upsample_flow2(&pu, h, w), upsample_flow2(&pv, h, w)),
            None => (Array2::zeros((h, w)), Array2::zeros((h, w))),
        };
        if cfg.iterations > 0 {
            let flow = FlowField::from_components(fu.clone(), fv.clone())?;
            let warped = warp_bilinear(d.view().insert_axis(Axis(0)), &flow)?
                .index_axis_move(Axis(0), 0);
            let (sx, sy) = gradients(s);
            let (wx, wy) = gradients(&warped);
            let ix = (&sx + &wx) * 0.5;
            let iy = (&sy + &wy) * 0.5;
            let it = &warped - s;
            let denom = ix.mapv(|g| g * g) + iy.mapv(|g| g * g) + alpha2;
            let (u0, v0) = (fu.clone(), fv.clone());
            for _ in 0..cfg.iterations {
                let ub = neighbour_mean(&fu);
                let vb = neighbour_mean(&fv);
                for ((y, x), t) in it.indexed_iter() {
                    let (gx, gy) = (ix[[y, x]], iy[[y, x]]);
                    let (ubar, vbar) = (ub[[y, x]], vb[[y, x]]);
                    let k = (gx * (ubar - u0[[y, x]]) + gy * (vbar - v0[[y, x]]) + t) / denom[[y, x]];
                    fu[[y, x]] = ubar - gx * k;
                    fv[[y, x]] = vbar - gy * k;
                }
            }
        }
        u = Some((fu, fv));
    }
    let (fu, fv) = u.expect("at least one level");
    let bound = fu.dim().0.max(fu.dim().1) as f64;
    let cast = |a: Array2<f64>| a.mapv(|v| T::lit(v.clamp(-bound, bound)));
    FlowField::from_components(cast(fu), cast(fv))
}

/// Forward and backward flows for every adjacent pair of `video`.
pub fn estimate_flow_set<T: Real>(video: &VideoSequence<T>, cfg: &FlowSolverConfig) -> Result<FlowSet<T>> {
    let n = video.frame_count();
    let mut forward = Vec::with_capacity(n.saturating_sub(1));
    let mut backward = Vec::with_capacity(n.saturating_sub(1));
    for i in 0..n.saturating_sub(1) {
        forward.push(estimate_flow(video.frame(i), video.frame(i + 1), cfg)?);
        backward.push(estimate_flow(video.frame(i + 1), video.frame(i), cfg)?);
    }
    FlowSet::new(forward, backward)
}
