//! Sequence losses for decoder fine-tuning and evaluation metrics.
//!
//! Losses reduce by sum over elements; metrics reduce by mean. The
//! warping-error metric is reported as the per-element mean absolute
//! residual multiplied by [`WE_SCALE`].

use ndarray::{Array2, Array3, ArrayView3, Axis, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{check_shape, CoreError, Result};
use crate::image_ops::{luminance, sobel};
use crate::motion::{warp_bilinear, FlowField, FlowSet, MaskSet};
use crate::scalar::Real;
use crate::sequence::VideoSequence;

pub const WE_SCALE: f64 = 1e4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    /// Structure weighting factor in `W = 1 + w·S`.
    pub w: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            alpha: 0.5,
            beta: 0.5,
            gamma: 0.025,
            w: 3.0,
        }
    }
}

/// Which forward flow the second structure-weighted term uses when comparing
/// `Warp(Î_i, ·)` against `Î_{i−1}`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ForwardTermIndex {
    /// `O_f[i]` with mask `M_f[i]`, for `i = 1..N−2` (0-based).
    #[default]
    AsPrinted,
    /// `O_f[i−1]` with mask `M_f[i−1]`, for `i = 1..N−1`; the pairing the
    /// latent guidance energy uses.
    Aligned,
}

/// Sobel edge magnitude `S ∈ [0, 1]` (normalised by its maximum) and the
/// weight map `W = 1 + w·S`.
#[derive(Clone, Debug, PartialEq)]
pub struct StructureMap<T> {
    pub edges: Array2<T>,
    pub weight: Array2<T>,
}

pub fn sobel_structure<T: Real>(frame: ArrayView3<'_, T>, w: T) -> Result<StructureMap<T>> {
    let luma = luminance(frame)?;
    let (gx, gy) = sobel(luma.view());
    let mut edges = Zip::from(&gx).and(&gy).map_collect(|&a, &b| (a * a + b * b).sqrt());
    let max = edges.iter().fold(T::zero(), |m, &v| m.max(v));
    if max > T::zero() {
        edges.mapv_inplace(|v| v / max);
    } else {
        edges.fill(T::zero());
    }
    let weight = edges.mapv(|s| T::one() + w * s);
    Ok(StructureMap { edges, weight })
}

pub fn structure_maps<T: Real>(gt: &VideoSequence<T>, w: T) -> Result<Vec<StructureMap<T>>> {
    (0..gt.frame_count()).map(|i| sobel_structure(gt.frame(i), w)).collect()
}

/// `Σ_i ‖(Î_{i+1} − Î_i) − (I_{i+1} − I_i)‖₁`.
pub fn frame_diff_loss<T: Real>(pred: &VideoSequence<T>, gt: &VideoSequence<T>) -> Result<T> {
    check_shape(pred.data().shape(), gt.data().shape())?;
    let n = pred.frame_count();
    if n < 2 {
        return Err(CoreError::InvalidArgument("frame difference needs >= 2 frames".into()));
    }
    let mut total = 0.0f64;
    for i in 0..n - 1 {
        Zip::from(&pred.frame(i + 1))
            .and(&pred.frame(i))
            .and(&gt.frame(i + 1))
            .and(&gt.frame(i))
            .for_each(|&p1, &p0, &g1, &g0| total += ((p1 - p0) - (g1 - g0)).abs().as_f64());
    }
    Ok(T::lit(total))
}

/// One weighted, masked residual term `Σ |M · W · (Warp(src, flow) − dst)|`.
fn swc_term<T: Real>(
    src: ArrayView3<'_, T>,
    dst: ArrayView3<'_, T>,
    flow: &FlowField<T>,
    mask: &crate::motion::OcclusionMask,
    weight: &Array2<T>,
) -> Result<f64> {
    let warped = warp_bilinear(src, flow)?;
    let mut total = 0.0;
    for ch in 0..src.dim().0 {
        for ((y, x), &m) in mask.data().indexed_iter() {
            if m == 1 {
                let r = warped[[ch, y, x]] - dst[[ch, y, x]];
                total += (weight[[y, x]] * r).abs().as_f64();
            }
        }
    }
    Ok(total)
}

/// Structure-weighted consistency loss on a predicted sequence, using
/// ground-truth flows, their occlusion masks and ground-truth structure maps
/// (the weight of the comparison's target frame).
pub fn swc_loss<T: Real>(
    pred: &VideoSequence<T>,
    gt_flows: &FlowSet<T>,
    masks: &MaskSet,
    structure: &[StructureMap<T>],
    index: ForwardTermIndex,
) -> Result<T> {
    let n = pred.frame_count();
    if n < 2 || gt_flows.forward.len() != n - 1 || masks.pairs() != n - 1 || structure.len() != n {
        return Err(CoreError::InvalidArgument(format!(
            "swc loss on {n} frames needs {} flow/mask pairs and {n} structure maps",
            n.saturating_sub(1)
        )));
    }
    if gt_flows.height() != pred.height() || gt_flows.width() != pred.width() {
        return Err(CoreError::Shape {
            expected: vec![pred.height(), pred.width()],
            actual: vec![gt_flows.height(), gt_flows.width()],
        });
    }
    let mut total = 0.0;
    for i in 0..n - 1 {
        total += swc_term(
            pred.frame(i),
            pred.frame(i + 1),
            &gt_flows.backward[i],
            &masks.backward[i],
            &structure[i + 1].weight,
        )?;
    }
    match index {
        ForwardTermIndex::AsPrinted => {
            for i in 1..n - 1 {
                total += swc_term(
                    pred.frame(i),
                    pred.frame(i - 1),
                    &gt_flows.forward[i],
                    &masks.forward[i],
                    &structure[i - 1].weight,
                )?;
            }
        }
        ForwardTermIndex::Aligned => {
            for i in 1..n {
                total += swc_term(
                    pred.frame(i),
                    pred.frame(i - 1),
                    &gt_flows.forward[i - 1],
                    &masks.forward[i - 1],
                    &structure[i - 1].weight,
                )?;
            }
        }
    }
    Ok(T::lit(total))
}

/// `recon + α·diff + β·swc + γ·gan`.
pub fn total_video_loss(recon: f64, diff: f64, swc: f64, gan: f64, weights: &LossWeights) -> f64 {
    recon + weights.alpha * diff + weights.beta * swc + weights.gamma * gan
}

/// Mean over pairs of the per-element mean `|Î_{i+1} − Warp(Î_i, O_b,i)|`,
/// unscaled.
pub fn warping_error_per_element<T: Real>(pred: &VideoSequence<T>, bwd: &[FlowField<T>]) -> Result<f64> {
    let n = pred.frame_count();
    if n < 2 {
        return Err(CoreError::InvalidArgument("warping error needs >= 2 frames".into()));
    }
    if bwd.len() != n - 1 {
        return Err(CoreError::InvalidArgument(format!(
            "{n} frames need {} backward flows, got {}",
            n - 1,
            bwd.len()
        )));
    }
    let per_frame = (pred.channels() * pred.height() * pred.width()) as f64;
    let mut total = 0.0;
    for i in 0..n - 1 {
        let warped = warp_bilinear(pred.frame(i), &bwd[i])?;
        let mut acc = 0.0;
        Zip::from(&warped)
            .and(&pred.frame(i + 1))
            .for_each(|&w, &t| acc += (t - w).abs().as_f64());
        total += acc / per_frame;
    }
    Ok(total / (n - 1) as f64)
}

/// Average warping error, reported ×10⁴ per pixel-channel.
pub fn warping_error_metric<T: Real>(pred: &VideoSequence<T>, bwd: &[FlowField<T>]) -> Result<f64> {
    Ok(warping_error_per_element(pred, bwd)? * WE_SCALE)
}

pub const PSNR_CAP: f64 = 100.0;

pub fn psnr<T: Real>(a: ArrayView3<'_, T>, b: ArrayView3<'_, T>) -> Result<f64> {
    check_shape(a.shape(), b.shape())?;
    let mut acc = 0.0;
    Zip::from(&a).and(&b).for_each(|&x, &y| acc += (x - y).as_f64().powi(2));
    let mse = acc / a.len() as f64;
    if mse < 1e-10 {
        Ok(PSNR_CAP)
    } else {
        Ok((10.0 * (1.0 / mse).log10()).min(PSNR_CAP))
    }
}

const SSIM_WIN: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_C1: f64 = 0.01 * 0.01;
const SSIM_C2: f64 = 0.03 * 0.03;

fn ssim_window() -> Vec<f64> {
    let r = (SSIM_WIN / 2) as f64;
    let k: Vec<f64> = (0..SSIM_WIN)
        .map(|i| (-(i as f64 - r).powi(2) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    k.into_iter().map(|v| v / s).collect()
}

/// Separable "valid" filtering with the normalised Gaussian window.
fn filter_valid(img: &Array2<f64>, k: &[f64]) -> Array2<f64> {
    let (h, w) = img.dim();
    let n = k.len();
    let (oh, ow) = (h + 1 - n, w + 1 - n);
    let rows: Array2<f64> = Array2::from_shape_fn((h, ow), |(y, x)| (0..n).map(|j| k[j] * img[[y, x + j]]).sum());
    Array2::from_shape_fn((oh, ow), |(y, x)| (0..n).map(|j| k[j] * rows[[y + j, x]]).sum())
}

/// Mean SSIM with an 11×11 Gaussian window (σ = 1.5) over all fully
/// contained window positions, averaged across channels.
pub fn ssim<T: Real>(a: ArrayView3<'_, T>, b: ArrayView3<'_, T>) -> Result<f64> {
    check_shape(a.shape(), b.shape())?;
    let (c, h, w) = a.dim();
    if h < SSIM_WIN || w < SSIM_WIN {
        return Err(CoreError::InvalidArgument(format!(
            "ssim needs frames of at least {SSIM_WIN}x{SSIM_WIN}, got {h}x{w}"
        )));
    }
    let k = ssim_window();
    let mut sum = 0.0;
    for ch in 0..c {
        let x = a.index_axis(Axis(0), ch).mapv(|v| v.as_f64());
        let y = b.index_axis(Axis(0), ch).mapv(|v| v.as_f64());
        let mx = filter_valid(&x, &k);
        let my = filter_valid(&y, &k);
        let sxx = filter_valid(&(&x * &x), &k);
        let syy = filter_valid(&(&y * &y), &k);
        let sxy = filter_valid(&(&x * &y), &k);
        let mut acc = 0.0;
        for idx in 0..mx.len() {
            let (mx, my) = (mx.as_slice().unwrap()[idx], my.as_slice().unwrap()[idx]);
            let vx = sxx.as_slice().unwrap()[idx] - mx * mx;
            let vy = syy.as_slice().unwrap()[idx] - my * my;
            let cxy = sxy.as_slice().unwrap()[idx] - mx * my;
            acc += ((2.0 * mx * my + SSIM_C1) * (2.0 * cxy + SSIM_C2))
                / ((mx * mx + my * my + SSIM_C1) * (vx + vy + SSIM_C2));
        }
        sum += acc / mx.len() as f64;
    }
    Ok(sum / c as f64)
}

pub fn sequence_psnr<T: Real>(a: &VideoSequence<T>, b: &VideoSequence<T>) -> Result<f64> {
    check_shape(a.data().shape(), b.data().shape())?;
    let n = a.frame_count();
    let mut s = 0.0;
    for i in 0..n {
        s += psnr(a.frame(i), b.frame(i))?;
    }
    Ok(s / n as f64)
}

pub fn sequence_ssim<T: Real>(a: &VideoSequence<T>, b: &VideoSequence<T>) -> Result<f64> {
    check_shape(a.data().shape(), b.data().shape())?;
    let n = a.frame_count();
    let mut s = 0.0;
    for i in 0..n {
        s += ssim(a.frame(i), b.frame(i))?;
    }
    Ok(s / n as f64)
}

/// Channel-broadcast product of a mask and a weight map, for callers that
/// apply the swc weighting themselves.
pub fn masked_weight<T: Real>(mask: &crate::motion::OcclusionMask, weight: &Array2<T>, channels: usize) -> Array3<T> {
    let m = mask.as_real::<T>() * weight;
    let (h, w) = m.dim();
    Array3::from_shape_fn((channels, h, w), |(_, y, x)| m[[y, x]])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::motion::OcclusionMask;
    use crate::rng::Prng;
    use ndarray::Array4;

    fn random_video(n: usize, c: usize, h: usize, w: usize, seed: u64) -> VideoSequence<f64> {
        let mut rng = Prng::new(seed);
        VideoSequence::new(Array4::from_shape_fn((n, c, h, w), |_| rng.uniform())).unwrap()
    }

    #[test]
    fn total_loss_arithmetic() {
        let w = LossWeights::default();
        assert!((total_video_loss(1.0, 2.0, 4.0, 40.0, &w) - 5.0).abs() < 1e-12);
        let zero = LossWeights {
            alpha: 0.0,
            beta: 0.0,
            gamma: 0.0,
            ..w
        };
        assert_eq!(total_video_loss(1.25, 2.0, 4.0, 40.0, &zero), 1.25);
    }

    #[test]
    fn frame_diff_identities() {
        let gt = random_video(3, 3, 5, 5, 1);
        assert_eq!(frame_diff_loss(&gt, &gt).unwrap(), 0.0);
        let shifted = VideoSequence::new(gt.data().mapv(|v| v * 0.5 + 0.25)).unwrap();
        let base = VideoSequence::new(gt.data().mapv(|v| v * 0.5)).unwrap();
        assert!(frame_diff_loss(&shifted, &base).unwrap() < 1e-12);
        let one = random_video(1, 3, 5, 5, 2);
        assert!(frame_diff_loss(&one, &one).is_err());
    }

    #[test]
    fn frame_diff_matches_loop() {
        let p = random_video(3, 1, 4, 4, 3);
        let g = random_video(3, 1, 4, 4, 4);
        let (pd, gd) = (p.data(), g.data());
        let mut oracle = 0.0;
        for i in 0..2 {
            for y in 0..4 {
                for x in 0..4 {
                    let dp = pd[[i + 1, 0, y, x]] - pd[[i, 0, y, x]];
                    let dg = gd[[i + 1, 0, y, x]] - gd[[i, 0, y, x]];
                    oracle += (dp - dg).abs();
                }
            }
        }
        assert!((frame_diff_loss(&p, &g).unwrap() - oracle).abs() < 1e-12);
    }

    #[test]
    fn structure_of_uniform_and_step_frames() {
        let flat = Array3::from_elem((3, 6, 6), 0.4);
        let s = sobel_structure(flat.view(), 3.0).unwrap();
        assert!(s.edges.iter().all(|&v| v == 0.0));
        assert!(s.weight.iter().all(|&v| v == 1.0));

        let step = Array3::from_shape_fn((1, 6, 8), |(_, _, x)| if x >= 4 { 1.0 } else { 0.0 });
        let s = sobel_structure(step.view(), 3.0).unwrap();
        let max_w = s.weight.iter().cloned().fold(f64::MIN, f64::max);
        assert_eq!(max_w, 4.0);
        for y in 0..6 {
            assert_eq!(s.edges[[y, 3]], 1.0);
            assert_eq!(s.edges[[y, 4]], 1.0);
            assert_eq!(s.edges[[y, 0]], 0.0);
        }
        assert!(s.edges.iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn swc_zero_on_rigid_translation() {
        // content shifted right by 1 px per frame, integer flows, full masks
        let n = 3;
        let base = |x: isize, y: usize| ((x * 7 + y as isize * 3).rem_euclid(11)) as f64 / 10.0;
        let data = Array4::from_shape_fn((n, 1, 6, 8), |(i, _, y, x)| base(x as isize - i as isize, y));
        let video = VideoSequence::new(data).unwrap();
        let mut flows = FlowSet::zeros(n, 6, 8);
        for f in &mut flows.forward {
            *f = FlowField::constant(6, 8, 1.0, 0.0);
        }
        for b in &mut flows.backward {
            *b = FlowField::constant(6, 8, -1.0, 0.0);
        }
        // exclude border columns whose source falls off the canvas
        let edge = |x0: usize| OcclusionMask::new(Array2::from_shape_fn((6, 8), |(_, x)| u8::from(x != x0))).unwrap();
        let masks = MaskSet {
            forward: vec![edge(7); n - 1],
            backward: vec![edge(0); n - 1],
        };
        let st = structure_maps(&video, 3.0).unwrap();
        for index in [ForwardTermIndex::AsPrinted, ForwardTermIndex::Aligned] {
            assert!(swc_loss(&video, &flows, &masks, &st, index).unwrap() < 1e-12);
        }
    }

    #[test]
    fn swc_uniform_gt_reduces_to_masked_consistency() {
        let pred = random_video(3, 1, 5, 5, 9);
        let flows = FlowSet::zeros(3, 5, 5);
        let masks = MaskSet::ones(3, 5, 5);
        let flat = VideoSequence::new(Array4::from_elem((3, 1, 5, 5), 0.5)).unwrap();
        let st = structure_maps(&flat, 3.0).unwrap();
        let got = swc_loss(&pred, &flows, &masks, &st, ForwardTermIndex::Aligned).unwrap();
        let d = pred.data();
        let expected: f64 = (0..2).map(|i| 2.0 * (&d.index_axis(Axis(0), i + 1) - &d.index_axis(Axis(0), i)).mapv(f64::abs).sum()).sum();
        assert!((got - expected).abs() < 1e-10);
    }

    #[test]
    fn swc_monotone_in_w() {
        let pred = random_video(4, 3, 6, 6, 10);
        let gt = random_video(4, 3, 6, 6, 11);
        let mut flows = FlowSet::zeros(4, 6, 6);
        flows.backward[1] = FlowField::constant(6, 6, 0.5, -0.25);
        let masks = MaskSet::ones(4, 6, 6);
        let mut last = 0.0;
        for w in [0.0, 1.0, 3.0, 6.0] {
            let st = structure_maps(&gt, w).unwrap();
            let v = swc_loss(&pred, &flows, &masks, &st, ForwardTermIndex::AsPrinted).unwrap();
            assert!(v >= last);
            last = v;
        }
    }

    #[test]
    fn warping_error_examples() {
        let still = VideoSequence::new(Array4::from_elem((3, 3, 4, 4), 0.3)).unwrap();
        let zero = vec![FlowField::zeros(4, 4); 2];
        assert_eq!(warping_error_metric(&still, &zero).unwrap(), 0.0);

        let mut data = Array4::from_elem((2, 3, 4, 4), 0.5);
        data.index_axis_mut(Axis(0), 1).fill(0.51);
        let pair = VideoSequence::new(data).unwrap();
        let pe = warping_error_per_element(&pair, &zero[..1]).unwrap();
        assert!((pe - 0.01).abs() < 1e-12);
        assert!((warping_error_metric(&pair, &zero[..1]).unwrap() - 100.0).abs() < 1e-8);
        assert!(warping_error_metric(&still, &zero[..1]).is_err());
    }

    #[test]
    fn warping_error_averages_over_pairs() {
        let v = random_video(2, 1, 5, 5, 12);
        let flow = FlowField::constant(5, 5, 0.3, 0.6);
        let one = warping_error_metric(&v, std::slice::from_ref(&flow)).unwrap();
        // frames a, b, a, b: three pairs, the middle one reversed
        let d = v.data();
        let frames: Vec<_> = [0, 1, 0, 1].iter().map(|&i| d.index_axis(Axis(0), i).to_owned()).collect();
        let rep = VideoSequence::new(crate::sequence::stack_frames(&frames).unwrap()).unwrap();
        let rev = warping_error_metric(&VideoSequence::new(crate::sequence::stack_frames(&frames[1..3]).unwrap()).unwrap(), std::slice::from_ref(&flow)).unwrap();
        let three = warping_error_metric(&rep, &vec![flow; 3]).unwrap();
        assert!((three - (2.0 * one + rev) / 3.0).abs() < 1e-9);
    }

    #[test]
    fn psnr_ssim_examples() {
        let a = Array3::from_shape_fn((3, 16, 16), |(c, y, x)| ((c + y * 3 + x) % 9) as f64 / 10.0);
        assert_eq!(psnr(a.view(), a.view()).unwrap(), 100.0);
        assert!((ssim(a.view(), a.view()).unwrap() - 1.0).abs() < 1e-12);
        let b = a.mapv(|v| v + 0.1);
        assert!((psnr(a.view(), b.view()).unwrap() - 20.0).abs() < 1e-9);
        let small = Array3::<f64>::zeros((1, 8, 8));
        assert!(ssim(small.view(), small.view()).is_err());
        assert!(psnr(a.view(), small.view()).is_err());
    }

    #[test]
    fn ssim_matches_window_loop() {
        let mut rng = Prng::new(13);
        let a = Array3::from_shape_fn((1, 13, 14), |_| rng.uniform());
        let b = Array3::from_shape_fn((1, 13, 14), |_| rng.uniform());
        let mut g = [[0.0; 11]; 11];
        let mut s = 0.0;
        for (i, row) in g.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                let (dy, dx) = (i as f64 - 5.0, j as f64 - 5.0);
                *v = (-(dx * dx + dy * dy) / 4.5).exp();
                s += *v;
            }
        }
        let mut total = 0.0;
        for y0 in 0..3 {
            for x0 in 0..4 {
                let (mut mx, mut my, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for i in 0..11 {
                    for j in 0..11 {
                        let wgt = g[i][j] / s;
                        let (p, q) = (a[[0, y0 + i, x0 + j]], b[[0, y0 + i, x0 + j]]);
                        mx += wgt * p;
                        my += wgt * q;
                        sxx += wgt * p * p;
                        syy += wgt * q * q;
                        sxy += wgt * p * q;
                    }
                }
                let (vx, vy, cxy) = (sxx - mx * mx, syy - my * my, sxy - mx * my);
                total += ((2.0 * mx * my + 1e-4) * (2.0 * cxy + 9e-4)) / ((mx * mx + my * my + 1e-4) * (vx + vy + 9e-4));
            }
        }
        let oracle = total / 12.0;
        assert!((ssim(a.view(), b.view()).unwrap() - oracle).abs() < 1e-9);
        assert!((ssim(b.view(), a.view()).unwrap() - oracle).abs() < 1e-9);
    }
}
