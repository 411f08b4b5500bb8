//! im2col kernels for 2-D convolution and 3-tap temporal convolution.

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array2, Array4, ArrayView2, ArrayView4, ArrayViewMut2, Axis};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeometry {
    pub fn output_size(&self, h: usize, w: usize) -> (usize, usize) {
        (
            (h + 2 * self.pad - self.kernel) / self.stride + 1,
            (w + 2 * self.pad - self.kernel) / self.stride + 1,
        )
    }
}

/// Unfolds one `[C, H, W]` sample into `[C·k·k, Ho·Wo]` columns.
fn im2col(x: ArrayView4<'_, f32>, b: usize, g: ConvGeometry, cols: &mut Array2<f32>) {
    let (_, c, h, w) = x.dim();
    let (ho, wo) = g.output_size(h, w);
    let k = g.kernel;
    let xs = x.index_axis(Axis(0), b);
    let out = cols.as_slice_mut().expect("contiguous cols");
    for ci in 0..c {
        let plane = xs.index_axis(Axis(0), ci);
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let dst = &mut out[row * ho * wo..(row + 1) * ho * wo];
                for oy in 0..ho {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    let line = &mut dst[oy * wo..(oy + 1) * wo];
                    if iy < 0 || iy >= h as isize {
                        line.fill(0.0);
                        continue;
                    }
                    let src = plane.row(iy as usize);
                    for (ox, v) in line.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        *v = if ix < 0 || ix >= w as isize { 0.0 } else { src[ix as usize] };
                    }
                }
            }
        }
    }
}

/// Adds columns back onto one sample of `dx` (transpose of [`im2col`]).
fn col2im(cols: ArrayView2<'_, f32>, g: ConvGeometry, mut dx: ndarray::ArrayViewMut3<'_, f32>) {
    let (c, h, w) = dx.dim();
    let (ho, wo) = g.output_size(h, w);
    let k = g.kernel;
    let src = cols.as_slice().expect("contiguous cols");
    for ci in 0..c {
        let mut plane = dx.index_axis_mut(Axis(0), ci);
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let block = &src[row * ho * wo..(row + 1) * ho * wo];
                for oy in 0..ho {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let mut dst = plane.row_mut(iy as usize);
                    for (ox, &v) in block[oy * wo..(oy + 1) * wo].iter().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && ix < w as isize {
                            dst[ix as usize] += v;
                        }
                    }
                }
            }
        }
    }
}

fn weight_matrix(w: ArrayView4<'_, f32>) -> ArrayView2<'_, f32> {
    let (co, ci, kh, kw) = w.dim();
    w.into_shape_with_order((co, ci * kh * kw)).expect("contiguous weight")
}

pub fn conv2d_forward(x: ArrayView4<'_, f32>, w: ArrayView4<'_, f32>, bias: Option<&[f32]>, g: ConvGeometry) -> Array4<f32> {
    let (n, _, h, wd) = x.dim();
    let co = w.dim().0;
    let (ho, wo) = g.output_size(h, wd);
    let wm = weight_matrix(w);
    let mut out = Array4::<f32>::zeros((n, co, ho, wo));
    let mut cols = Array2::<f32>::zeros((wm.dim().1, ho * wo));
    for b in 0..n {
        im2col(x, b, g, &mut cols);
        let mut ob = out.index_axis_mut(Axis(0), b);
        let mut om: ArrayViewMut2<f32> = ob.view_mut().into_shape_with_order((co, ho * wo)).expect("contiguous out");
        general_mat_mul(1.0, &wm, &cols, 0.0, &mut om);
        if let Some(bias) = bias {
            for (mut row, &bv) in om.outer_iter_mut().zip(bias) {
                row += bv;
            }
        }
    }
    out
}

/// Returns `(dx, dw, db)` for an upstream gradient `dy`.
pub fn conv2d_backward(
    x: ArrayView4<'_, f32>,
    w: ArrayView4<'_, f32>,
    dy: ArrayView4<'_, f32>,
    g: ConvGeometry,
    need_dx: bool,
) -> (Option<Array4<f32>>, Array4<f32>, Vec<f32>) {
    let (n, ci, h, wd) = x.dim();
    let (co, _, kh, kw) = w.dim();
    let (ho, wo) = g.output_size(h, wd);
    let wm = weight_matrix(w);
    let mut dw = Array2::<f32>::zeros((co, ci * kh * kw));
    let mut db = vec![0.0f32; co];
    let mut dx = need_dx.then(|| Array4::<f32>::zeros((n, ci, h, wd)));
    let mut cols = Array2::<f32>::zeros((ci * kh * kw, ho * wo));
    let mut dcols = Array2::<f32>::zeros((ci * kh * kw, ho * wo));
    for b in 0..n {
        let dyb = dy.index_axis(Axis(0), b);
        let dym = dyb.into_shape_with_order((co, ho * wo)).expect("contiguous grad");
        for (acc, row) in db.iter_mut().zip(dym.outer_iter()) {
            *acc += row.sum();
        }
        im2col(x, b, g, &mut cols);
        general_mat_mul(1.0, &dym, &cols.t(), 1.0, &mut dw);
        if let Some(dx) = dx.as_mut() {
            general_mat_mul(1.0, &wm.t(), &dym, 0.0, &mut dcols);
            col2im(dcols.view(), g, dx.index_axis_mut(Axis(0), b));
        }
    }
    let dw = dw.into_shape_with_order((co, ci, kh, kw)).expect("weight shape");
    (dx, dw, db)
}

/// Source frame for tap `k ∈ {0, 1, 2}` at frame `n` of a group of `frames`,
/// with reflect padding at both ends (a single frame maps to itself).
#[inline]
pub fn temporal_source(n: usize, k: usize, frames: usize) -> usize {
    if frames == 1 {
        return 0;
    }
    let i = n as isize + k as isize - 1;
    if i < 0 {
        1
    } else if i as usize >= frames {
        frames - 2
    } else {
        i as usize
    }
}

/// `x`: `[G·F, C, H, W]`; `w`: `[Co, C, 3]`; output `[G·F, Co, H, W]`.
pub fn temporal_forward(x: ArrayView4<'_, f32>, w: ndarray::ArrayView3<'_, f32>, bias: &[f32], frames: usize) -> Array4<f32> {
    let (total, c, h, wd) = x.dim();
    let co = w.dim().0;
    let mut out = Array4::<f32>::zeros((total, co, h, wd));
    for idx in 0..total {
        let (g0, n) = (idx - idx % frames, idx % frames);
        let mut ob = out.index_axis_mut(Axis(0), idx);
        let mut om = ob.view_mut().into_shape_with_order((co, h * wd)).expect("contiguous");
        for k in 0..3 {
            let src = g0 + temporal_source(n, k, frames);
            let xm = x.index_axis(Axis(0), src).into_shape_with_order((c, h * wd)).expect("contiguous");
            let wk = w.slice(s![.., .., k]);
            general_mat_mul(1.0, &wk, &xm, 1.0, &mut om);
        }
        for (mut row, &bv) in om.outer_iter_mut().zip(bias) {
            row += bv;
        }
    }
    out
}

pub fn temporal_backward(
    x: ArrayView4<'_, f32>,
    w: ndarray::ArrayView3<'_, f32>,
    dy: ArrayView4<'_, f32>,
    frames: usize,
) -> (Array4<f32>, ndarray::Array3<f32>, Vec<f32>) {
    let (total, c, h, wd) = x.dim();
    let co = w.dim().0;
    let mut dx = Array4::<f32>::zeros((total, c, h, wd));
    let mut dw = ndarray::Array3::<f32>::zeros((co, c, 3));
    let mut db = vec![0.0f32; co];
    for idx in 0..total {
        let (g0, n) = (idx - idx % frames, idx % frames);
        let dym = dy.index_axis(Axis(0), idx).into_shape_with_order((co, h * wd)).expect("contiguous");
        for (acc, row) in db.iter_mut().zip(dym.outer_iter()) {
            *acc += row.sum();
        }
        for k in 0..3 {
            let src = g0 + temporal_source(n, k, frames);
            let xm = x.index_axis(Axis(0), src).into_shape_with_order((c, h * wd)).expect("contiguous");
            let mut dwk = dw.slice_mut(s![.., .., k]);
            general_mat_mul(1.0, &dym, &xm.t(), 1.0, &mut dwk);
            let mut dxs = dx.index_axis_mut(Axis(0), src);
            let mut dxm = dxs.view_mut().into_shape_with_order((c, h * wd)).expect("contiguous");
            general_mat_mul(1.0, &w.slice(s![.., .., k]).t(), &dym, 1.0, &mut dxm);
        }
    }
    (dx, dw, db)
}
