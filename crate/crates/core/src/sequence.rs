//! Frame-sequence containers shared by every stage of the pipeline.

use ndarray::{Array3, Array4, ArrayView, ArrayView3, ArrayViewMut3, Axis, Dimension, Zip};

use crate::error::{check_shape, CoreError, Result};
use crate::scalar::Real;

/// Pixel frames `[N, C, H, W]` with values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct VideoSequence<T> {
    data: Array4<T>,
}

impl<T: Real> VideoSequence<T> {
    /// Validates shape, finiteness and range.
    pub fn new(data: Array4<T>) -> Result<Self> {
        let (n, c, h, w) = data.dim();
        if n == 0 || h == 0 || w == 0 || !(c == 1 || c == 3) {
            return Err(CoreError::InvalidArgument(format!(
                "video must be [N>0, C in {{1,3}}, H>0, W>0], got {:?}",
                data.shape()
            )));
        }
        if let Some(bad) = data
            .iter()
            .find(|v| !v.is_finite() || **v < T::zero() || **v > T::one())
        {
            return Err(CoreError::InvalidArgument(format!(
                "video entry {bad} outside [0, 1]"
            )));
        }
        Ok(Self { data })
    }

    /// Clamps into `[0, 1]` (non-finite entries become 0) before validating shape.
    pub fn from_clamped(mut data: Array4<T>) -> Result<Self> {
        data.mapv_inplace(|v| {
            if v.is_finite() {
                v.max(T::zero()).min(T::one())
            } else {
                T::zero()
            }
        });
        Self::new(data)
    }

    pub fn from_frames(frames: &[Array3<T>]) -> Result<Self> {
        Self::new(stack_frames(frames)?)
    }

    pub fn data(&self) -> &Array4<T> {
        &self.data
    }

    pub fn into_inner(self) -> Array4<T> {
        self.data
    }

    pub fn frame_count(&self) -> usize {
        self.data.dim().0
    }

    pub fn channels(&self) -> usize {
        self.data.dim().1
    }

    pub fn height(&self) -> usize {
        self.data.dim().2
    }

    pub fn width(&self) -> usize {
        self.data.dim().3
    }

    pub fn frame(&self, i: usize) -> ArrayView3<'_, T> {
        self.data.index_axis(Axis(0), i)
    }

    pub fn cast<U: Real>(&self) -> VideoSequence<U> {
        VideoSequence {
            data: self.data.mapv(|v| U::lit(v.as_f64())),
        }
    }
}

/// Latent grids `[N, C_z, h, w]`; entries are unbounded but finite.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentSequence<T> {
    data: Array4<T>,
}

impl<T: Real> LatentSequence<T> {
    pub fn new(data: Array4<T>) -> Result<Self> {
        if data.is_empty() {
            return Err(CoreError::InvalidArgument("empty latent sequence".into()));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(CoreError::InvalidArgument(
                "latent sequence has non-finite entries".into(),
            ));
        }
        Ok(Self { data })
    }

    pub fn zeros(shape: (usize, usize, usize, usize)) -> Self {
        Self {
            data: Array4::zeros(shape),
        }
    }

    pub fn data(&self) -> &Array4<T> {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut Array4<T> {
        &mut self.data
    }

    pub fn into_inner(self) -> Array4<T> {
        self.data
    }

    pub fn frame_count(&self) -> usize {
        self.data.dim().0
    }

    pub fn frame(&self, i: usize) -> ArrayView3<'_, T> {
        self.data.index_axis(Axis(0), i)
    }

    pub fn frame_mut(&mut self, i: usize) -> ArrayViewMut3<'_, T> {
        self.data.index_axis_mut(Axis(0), i)
    }

    pub fn shape(&self) -> [usize; 4] {
        let (n, c, h, w) = self.data.dim();
        [n, c, h, w]
    }

    pub fn cast<U: Real>(&self) -> LatentSequence<U> {
        LatentSequence {
            data: self.data.mapv(|v| U::lit(v.as_f64())),
        }
    }
}

pub fn stack_frames<T: Real>(frames: &[Array3<T>]) -> Result<Array4<T>> {
    let first = frames
        .first()
        .ok_or_else(|| CoreError::InvalidArgument("no frames".into()))?;
    let (c, h, w) = first.dim();
    let mut out = Array4::zeros((frames.len(), c, h, w));
    for (i, f) in frames.iter().enumerate() {
        check_shape(first.shape(), f.shape())?;
        out.index_axis_mut(Axis(0), i).assign(f);
    }
    Ok(out)
}

/// Sum of absolute differences, accumulated in `f64`.
pub fn l1_total<T: Real, D: Dimension>(a: ArrayView<'_, T, D>, b: ArrayView<'_, T, D>) -> Result<T> {
    check_shape(a.shape(), b.shape())?;
    let mut acc = 0.0f64;
    Zip::from(&a).and(&b).for_each(|&x, &y| acc += (x - y).abs().as_f64());
    Ok(T::lit(acc))
}
