//! Backward bilinear warping and its vector-Jacobian product.
//!
//! `out(p) = input(p + flow(p))`, sampled bilinearly with the sample
//! position clamped to the image rectangle. The operation is linear in
//! `input`; [`warp_vjp`] applies the transposed operator.

use ndarray::{Array3, ArrayView3};

use crate::error::{check_shape, CoreError, Result};
use crate::motion::FlowField;
use crate::scalar::Real;

/// Bilinear taps for a (clamped) sample position: four `(y, x, weight)`.
#[inline]
pub(crate) fn bilinear_taps<T: Real>(x: T, y: T, h: usize, w: usize) -> [(usize, usize, T); 4] {
    let xmax = T::from_usize_lossy(w - 1);
    let ymax = T::from_usize_lossy(h - 1);
    let x = x.max(T::zero()).min(xmax);
    let y = y.max(T::zero()).min(ymax);
    let x0f = x.floor();
    let y0f = y.floor();
    let fx = x - x0f;
    let fy = y - y0f;
    let x0 = x0f.to_usize().unwrap_or(0);
    let y0 = y0f.to_usize().unwrap_or(0);
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    let one = T::one();
    [
        (y0, x0, (one - fx) * (one - fy)),
        (y0, x1, fx * (one - fy)),
        (y1, x0, (one - fx) * fy),
        (y1, x1, fx * fy),
    ]
}

fn check_grid<T: Real>(shape: (usize, usize, usize), flow: &FlowField<T>) -> Result<()> {
    let (_, h, w) = shape;
    if flow.height() != h || flow.width() != w {
        return Err(CoreError::Shape {
            expected: vec![h, w],
            actual: vec![flow.height(), flow.width()],
        });
    }
    Ok(())
}

pub fn warp_bilinear<T: Real>(input: ArrayView3<'_, T>, flow: &FlowField<T>) -> Result<Array3<T>> {
    check_grid(input.dim(), flow)?;
    let (c, h, w) = input.dim();
    let mut out = Array3::zeros((c, h, w));
    for y in 0..h {
        for x in 0..w {
            let (dx, dy) = flow.at(y, x);
            let taps = bilinear_taps(T::from_usize_lossy(x) + dx, T::from_usize_lossy(y) + dy, h, w);
            for ch in 0..c {
                let mut acc = T::zero();
                for &(ty, tx, wt) in &taps {
                    acc += wt * input[[ch, ty, tx]];
                }
                out[[ch, y, x]] = acc;
            }
        }
    }
    Ok(out)
}

/// `(∂ warp / ∂ input)ᵀ · upstream`: scatters each upstream value back onto
/// the four source pixels it was interpolated from.
pub fn warp_vjp<T: Real>(flow: &FlowField<T>, upstream: ArrayView3<'_, T>) -> Result<Array3<T>> {
    check_grid(upstream.dim(), flow)?;
    let (c, h, w) = upstream.dim();
    let mut grad = Array3::zeros((c, h, w));
    for y in 0..h {
        for x in 0..w {
            let (dx, dy) = flow.at(y, x);
            let taps = bilinear_taps(T::from_usize_lossy(x) + dx, T::from_usize_lossy(y) + dy, h, w);
            for ch in 0..c {
                let u = upstream[[ch, y, x]];
                if u == T::zero() {
                    continue;
                }
                for &(ty, tx, wt) in &taps {
                    grad[[ch, ty, tx]] += wt * u;
                }
            }
        }
    }
    Ok(grad)
}

/// Shape-checked variant used where the input tensor is at hand.
pub fn warp_vjp_for<T: Real>(
    input: ArrayView3<'_, T>,
    flow: &FlowField<T>,
    upstream: ArrayView3<'_, T>,
) -> Result<Array3<T>> {
    check_shape(input.shape(), upstream.shape())?;
    warp_vjp(flow, upstream)
}
