use ndarray::{Array2, Array3, ArrayView2, Axis};

use crate::error::{CoreError, Result};
use crate::image_ops::area_downsample2;
use crate::scalar::Real;

/// Dense displacement field `[2, H, W]`: channel 0 is dx, channel 1 is dy,
/// both in pixels of the grid the field lives on.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowField<T> {
    data: Array3<T>,
}

impl<T: Real> FlowField<T> {
    pub fn new(data: Array3<T>) -> Result<Self> {
        let (c, h, w) = data.dim();
        if c != 2 || h == 0 || w == 0 {
            return Err(CoreError::InvalidArgument(format!(
                "flow must be [2, H, W], got {:?}",
                data.shape()
            )));
        }
        let bound = T::from_usize_lossy(h.max(w));
        if data.iter().any(|v| !v.is_finite() || v.abs() > bound) {
            return Err(CoreError::InvalidArgument(
                "flow has non-finite or out-of-bound displacements".into(),
            ));
        }
        Ok(Self { data })
    }

    pub fn from_components(dx: Array2<T>, dy: Array2<T>) -> Result<Self> {
        if dx.dim() != dy.dim() {
            return Err(CoreError::Shape {
                expected: dx.shape().to_vec(),
                actual: dy.shape().to_vec(),
            });
        }
        let data = ndarray::stack(Axis(0), &[dx.view(), dy.view()]).expect("same shapes");
        Self::new(data)
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            data: Array3::zeros((2, height, width)),
        }
    }

    pub fn constant(height: usize, width: usize, dx: T, dy: T) -> Self {
        let mut data = Array3::zeros((2, height, width));
        data.index_axis_mut(Axis(0), 0).fill(dx);
        data.index_axis_mut(Axis(0), 1).fill(dy);
        Self { data }
    }

    pub fn height(&self) -> usize {
        self.data.dim().1
    }

    pub fn width(&self) -> usize {
        self.data.dim().2
    }

    pub fn data(&self) -> &Array3<T> {
        &self.data
    }

    pub fn dx(&self) -> ArrayView2<'_, T> {
        self.data.index_axis(Axis(0), 0)
    }

    pub fn dy(&self) -> ArrayView2<'_, T> {
        self.data.index_axis(Axis(0), 1)
    }

    #[inline]
    pub fn at(&self, y: usize, x: usize) -> (T, T) {
        (self.data[[0, y, x]], self.data[[1, y, x]])
    }

    pub fn negated(&self) -> Self {
        Self {
            data: self.data.mapv(|v| -v),
        }
    }

    pub fn cast<U: Real>(&self) -> FlowField<U> {
        FlowField {
            data: self.data.mapv(|v| U::lit(v.as_f64())),
        }
    }
}

/// Forward and backward flows for every adjacent pair of an `N`-frame
/// sequence. `forward[i]` lives on frame `i` and points to frame `i + 1`;
/// `backward[i]` lives on frame `i + 1` and points to frame `i`.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowSet<T> {
    pub forward: Vec<FlowField<T>>,
    pub backward: Vec<FlowField<T>>,
}

impl<T: Real> FlowSet<T> {
    pub fn new(forward: Vec<FlowField<T>>, backward: Vec<FlowField<T>>) -> Result<Self> {
        if forward.len() != backward.len() || forward.is_empty() {
            return Err(CoreError::InvalidArgument(format!(
                "flow set needs matching non-empty lists, got {} forward / {} backward",
                forward.len(),
                backward.len()
            )));
        }
        let (h, w) = (forward[0].height(), forward[0].width());
        if forward
            .iter()
            .chain(backward.iter())
            .any(|f| f.height() != h || f.width() != w)
        {
            return Err(CoreError::InvalidArgument(
                "flow fields in a set must share one grid".into(),
            ));
        }
        Ok(Self { forward, backward })
    }

    pub fn zeros(frames: usize, height: usize, width: usize) -> Self {
        let n = frames.saturating_sub(1).max(1);
        Self {
            forward: vec![FlowField::zeros(height, width); n],
            backward: vec![FlowField::zeros(height, width); n],
        }
    }

    /// Number of frames the set describes (`pairs + 1`).
    pub fn frame_count(&self) -> usize {
        self.forward.len() + 1
    }

    pub fn height(&self) -> usize {
        self.forward[0].height()
    }

    pub fn width(&self) -> usize {
        self.forward[0].width()
    }

    pub fn downsample(&self, target_h: usize, target_w: usize) -> Result<Self> {
        let f = self
            .forward
            .iter()
            .map(|f| downsample_flow(f, target_h, target_w))
            .collect::<Result<Vec<_>>>()?;
        let b = self
            .backward
            .iter()
            .map(|f| downsample_flow(f, target_h, target_w))
            .collect::<Result<Vec<_>>>()?;
        Self::new(f, b)
    }

    pub fn cast<U: Real>(&self) -> FlowSet<U> {
        FlowSet {
            forward: self.forward.iter().map(FlowField::cast).collect(),
            backward: self.backward.iter().map(FlowField::cast).collect(),
        }
    }
}

/// Area-average the field onto a grid smaller by one integer factor `k` on
/// both axes, then divide the displacements by `k` so they are expressed in
/// target-grid pixels.
pub fn downsample_flow<T: Real>(flow: &FlowField<T>, target_h: usize, target_w: usize) -> Result<FlowField<T>> {
    let (h, w) = (flow.height(), flow.width());
    if target_h == 0
        || target_w == 0
        || h % target_h != 0
        || w % target_w != 0
        || h / target_h != w / target_w
    {
        return Err(CoreError::InvalidArgument(format!(
            "{h}x{w} cannot be reduced to {target_h}x{target_w} by one integer factor"
        )));
    }
    let k = h / target_h;
    let scale = T::one() / T::from_usize_lossy(k);
    let dx = area_downsample2(flow.dx(), k)?.mapv(|v| v * scale);
    let dy = area_downsample2(flow.dy(), k)?.mapv(|v| v * scale);
    FlowField::from_components(dx, dy)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Prng;

    #[test]
    fn uniform_flow_scales() {
        let f = FlowField::constant(64, 64, 8.0f64, 8.0);
        let d = downsample_flow(&f, 8, 8).unwrap();
        assert!(d.data().iter().all(|&v| v == 1.0));
        let z = downsample_flow(&FlowField::<f64>::zeros(32, 32), 4, 4).unwrap();
        assert!(z.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn block_average_oracle() {
        let mut rng = Prng::new(5);
        let data = Array3::from_shape_fn((2, 6, 6), |_| rng.uniform_range(-2.0, 2.0));
        let f = FlowField::new(data.clone()).unwrap();
        let d = downsample_flow(&f, 3, 3).unwrap();
        for c in 0..2 {
            for y in 0..3 {
                for x in 0..3 {
                    let mean = (data[[c, 2 * y, 2 * x]]
                        + data[[c, 2 * y + 1, 2 * x]]
                        + data[[c, 2 * y, 2 * x + 1]]
                        + data[[c, 2 * y + 1, 2 * x + 1]])
                        / 4.0;
                    assert!((d.data()[[c, y, x]] - mean / 2.0).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn non_integer_factor_rejected() {
        let f = FlowField::<f32>::zeros(12, 12);
        assert!(downsample_flow(&f, 5, 5).is_err());
        assert!(downsample_flow(&f, 6, 4).is_err());
    }

    #[test]
    fn flow_validation() {
        assert!(FlowField::new(Array3::<f32>::zeros((3, 4, 4))).is_err());
        assert!(FlowField::new(Array3::<f32>::from_elem((2, 4, 4), 5.0)).is_err());
        assert!(FlowSet::new(vec![FlowField::<f32>::zeros(4, 4)], vec![]).is_err());
    }
}
