//! Forward–backward consistency occlusion masks.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::motion::warp::bilinear_taps;
use crate::motion::{FlowField, FlowSet};
use crate::scalar::Real;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OcclusionConfig {
    pub alpha1: f64,
    pub alpha2: f64,
}

impl Default for OcclusionConfig {
    fn default() -> Self {
        Self {
            alpha1: 0.01,
            alpha2: 0.5,
        }
    }
}

/// Binary validity map: 1 = visible in the neighbouring frame, 0 = occluded.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OcclusionMask {
    data: Array2<u8>,
}

impl OcclusionMask {
    pub fn new(data: Array2<u8>) -> Result<Self> {
        if data.iter().any(|&v| v > 1) {
            return Err(CoreError::InvalidArgument("mask entries must be 0 or 1".into()));
        }
        Ok(Self { data })
    }

    pub fn ones(height: usize, width: usize) -> Self {
        Self {
            data: Array2::ones((height, width)),
        }
    }

    pub fn data(&self) -> &Array2<u8> {
        &self.data
    }

    pub fn height(&self) -> usize {
        self.data.dim().0
    }

    pub fn width(&self) -> usize {
        self.data.dim().1
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> bool {
        self.data[[y, x]] == 1
    }

    pub fn as_real<T: Real>(&self) -> Array2<T> {
        self.data.mapv(|v| if v == 1 { T::one() } else { T::zero() })
    }

    pub fn valid_fraction(&self) -> f64 {
        self.data.iter().filter(|&&v| v == 1).count() as f64 / self.data.len() as f64
    }

    /// Nearest-neighbour reduction by an integer factor (sample at the
    /// block centre), re-binarised at 0.5.
    pub fn downsample_nearest(&self, factor: usize) -> Result<Self> {
        let (h, w) = self.data.dim();
        if factor == 0 || h % factor != 0 || w % factor != 0 {
            return Err(CoreError::InvalidArgument(format!(
                "factor {factor} does not divide {h}x{w}"
            )));
        }
        let values: Array2<f32> = self.as_real();
        let data = Array2::from_shape_fn((h / factor, w / factor), |(y, x)| {
            let v = values[[y * factor + factor / 2, x * factor + factor / 2]];
            u8::from(v >= 0.5)
        });
        Ok(Self { data })
    }

    /// F1 of the *occluded* class against a reference mask.
    pub fn occlusion_f1(&self, reference: &OcclusionMask) -> f64 {
        let (mut tp, mut fp, mut fne) = (0usize, 0usize, 0usize);
        for (&p, &r) in self.data.iter().zip(reference.data.iter()) {
            match (p == 0, r == 0) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fne += 1,
                _ => {}
            }
        }
        if tp + fp + fne == 0 {
            return 1.0;
        }
        2.0 * tp as f64 / (2 * tp + fp + fne) as f64
    }
}

/// Per-pair masks in both directions. `forward[i]` lives on frame `i` (for
/// `FlowSet::forward[i]`), `backward[i]` on frame `i + 1`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MaskSet {
    pub forward: Vec<OcclusionMask>,
    pub backward: Vec<OcclusionMask>,
}

impl MaskSet {
    pub fn ones(frames: usize, height: usize, width: usize) -> Self {
        let n = frames.saturating_sub(1).max(1);
        Self {
            forward: vec![OcclusionMask::ones(height, width); n],
            backward: vec![OcclusionMask::ones(height, width); n],
        }
    }

    /// Masks for every pair of a flow set.
    pub fn from_flows<T: Real>(flows: &FlowSet<T>, cfg: &OcclusionConfig) -> Self {
        let forward = flows
            .forward
            .iter()
            .zip(flows.backward.iter())
            .map(|(f, b)| occlusion_mask_fb(f, b, cfg.alpha1, cfg.alpha2))
            .collect::<Result<Vec<_>>>()
            .expect("flow set grids agree");
        let backward = flows
            .backward
            .iter()
            .zip(flows.forward.iter())
            .map(|(b, f)| occlusion_mask_fb(b, f, cfg.alpha1, cfg.alpha2))
            .collect::<Result<Vec<_>>>()
            .expect("flow set grids agree");
        Self { forward, backward }
    }

    pub fn downsample_nearest(&self, factor: usize) -> Result<Self> {
        Ok(Self {
            forward: self
                .forward
                .iter()
                .map(|m| m.downsample_nearest(factor))
                .collect::<Result<_>>()?,
            backward: self
                .backward
                .iter()
                .map(|m| m.downsample_nearest(factor))
                .collect::<Result<_>>()?,
        })
    }

    pub fn pairs(&self) -> usize {
        self.forward.len()
    }
}

/// Marks `p` occluded when
/// `|f(p) + b(p + f(p))|² > alpha1 · (|f(p)|² + |b(p + f(p))|²) + alpha2`,
/// with `b` sampled bilinearly (clamped) at the displaced position.
pub fn occlusion_mask_fb<T: Real>(
    fwd: &FlowField<T>,
    bwd: &FlowField<T>,
    alpha1: f64,
    alpha2: f64,
) -> Result<OcclusionMask> {
    let (h, w) = (fwd.height(), fwd.width());
    if bwd.height() != h || bwd.width() != w {
        return Err(CoreError::Shape {
            expected: vec![h, w],
            actual: vec![bwd.height(), bwd.width()],
        });
    }
    let bdx = bwd.dx();
    let bdy = bwd.dy();
    let data = Array2::from_shape_fn((h, w), |(y, x)| {
        let (fx, fy) = fwd.at(y, x);
        let (fx, fy) = (fx.as_f64(), fy.as_f64());
        let taps = bilinear_taps(x as f64 + fx, y as f64 + fy, h, w);
        let (mut bx, mut by) = (0.0, 0.0);
        for &(ty, tx, wt) in &taps {
            bx += wt * bdx[[ty, tx]].as_f64();
            by += wt * bdy[[ty, tx]].as_f64();
        }
        let lhs = (fx + bx).powi(2) + (fy + by).powi(2);
        let rhs = alpha1 * (fx * fx + fy * fy + bx * bx + by * by) + alpha2;
        u8::from(lhs <= rhs)
    });
    Ok(OcclusionMask { data })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Prng;
    use ndarray::Array3;

    #[test]
    fn consistent_constant_flows() {
        let f = FlowField::constant(8, 8, 1.5f64, -0.5);
        let m = occlusion_mask_fb(&f, &f.negated(), 0.01, 0.5).unwrap();
        assert!(m.data().iter().all(|&v| v == 1));
    }

    #[test]
    fn huge_alpha2_never_fires() {
        let mut rng = Prng::new(9);
        let f = FlowField::new(Array3::from_shape_fn((2, 8, 8), |_| rng.uniform_range(-3.0, 3.0))).unwrap();
        let b = FlowField::new(Array3::from_shape_fn((2, 8, 8), |_| rng.uniform_range(-3.0, 3.0))).unwrap();
        let m = occlusion_mask_fb(&f, &b, 0.01, 1e12).unwrap();
        assert!(m.data().iter().all(|&v| v == 1));
    }

    #[test]
    fn raising_alpha2_is_monotone() {
        let mut rng = Prng::new(10);
        let f = FlowField::new(Array3::from_shape_fn((2, 10, 10), |_| rng.uniform_range(-2.0, 2.0))).unwrap();
        let b = FlowField::new(Array3::from_shape_fn((2, 10, 10), |_| rng.uniform_range(-2.0, 2.0))).unwrap();
        let lo = occlusion_mask_fb(&f, &b, 0.01, 0.5).unwrap();
        let hi = occlusion_mask_fb(&f, &b, 0.01, 2.0).unwrap();
        for (a, b) in lo.data().iter().zip(hi.data().iter()) {
            assert!(b >= a);
        }
    }

    #[test]
    fn nearest_downsample() {
        let mut data = Array2::<u8>::ones((4, 4));
        data[[1, 1]] = 0;
        data[[0, 0]] = 0;
        let m = OcclusionMask::new(data).unwrap().downsample_nearest(2).unwrap();
        assert_eq!(m.data()[[0, 0]], 0);
        assert_eq!(m.data()[[1, 1]], 1);
        assert!(OcclusionMask::new(Array2::from_elem((2, 2), 2u8)).is_err());
    }

    #[test]
    fn f1_scores() {
        let mut a = Array2::<u8>::ones((2, 2));
        a[[0, 0]] = 0;
        let m = OcclusionMask::new(a).unwrap();
        assert_eq!(m.occlusion_f1(&m), 1.0);
        assert_eq!(m.occlusion_f1(&OcclusionMask::ones(2, 2)), 0.0);
    }
}
