//! Convolution kernels. Both are cross-correlations (no kernel flip) lowered
//! onto GEMM.

use crate::tensor::{gemm, MatRef, Scalar};

/// Extents of a batched full 1-D convolution over the sequence axis of
/// `[B, L, d]` inputs with `[F, m, d]` filters.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct TextConvDims {
    pub batch: usize,
    pub len: usize,
    pub dim: usize,
    pub filters: usize,
    pub height: usize,
}

impl TextConvDims {
    /// Output length `L + m - 1`: the input is zero-padded by `m - 1` rows
    /// on both ends.
    pub fn out_len(&self) -> usize {
        self.len + self.height - 1
    }

    fn padded(&self) -> usize {
        self.len + 2 * (self.height - 1)
    }

    fn window(&self) -> usize {
        self.height * self.dim
    }
}

fn pad_sequence<T: Scalar>(x: &[T], d: &TextConvDims) -> Vec<T> {
    let mut padded = vec![T::zero(); d.padded() * d.dim];
    let off = (d.height - 1) * d.dim;
    padded[off..off + d.len * d.dim].copy_from_slice(x);
    padded
}

/// `out[b, f, i] = bias[f] + sum_{j,k} S_pad[b, i + j, k] * w[f, j, k]`.
pub(crate) fn conv_text_forward<T: Scalar>(x: &[T], w: &[T], bias: &[T], d: &TextConvDims) -> Vec<T> {
    let (t, win) = (d.out_len(), d.window());
    let mut out = vec![T::zero(); d.batch * d.filters * t];
    for b in 0..d.batch {
        let padded = pad_sequence(&x[b * d.len * d.dim..(b + 1) * d.len * d.dim], d);
        // Row i of the window matrix is padded[i*dim .. i*dim + m*dim].
        let windows = MatRef::strided(&padded, t, win, d.dim, 1);
        let ob = &mut out[b * d.filters * t..(b + 1) * d.filters * t];
        for (f, row) in ob.chunks_mut(t).enumerate() {
            row.fill(bias[f]);
        }
        gemm(T::one(), MatRef::new(w, d.filters, win), windows.t(), T::one(), ob);
    }
    out
}

/// Returns `(dx, dw, dbias)`; `dx` is skipped when not requested.
pub(crate) fn conv_text_backward<T: Scalar>(
    x: &[T],
    w: &[T],
    dout: &[T],
    d: &TextConvDims,
    need_dx: bool,
) -> (Option<Vec<T>>, Vec<T>, Vec<T>) {
    let (t, win) = (d.out_len(), d.window());
    let mut dw = vec![T::zero(); d.filters * win];
    let mut db = vec![T::zero(); d.filters];
    let mut dx = need_dx.then(|| vec![T::zero(); x.len()]);
    let mut dwin = vec![T::zero(); t * win];
    for b in 0..d.batch {
        let padded = pad_sequence(&x[b * d.len * d.dim..(b + 1) * d.len * d.dim], d);
        let windows = MatRef::strided(&padded, t, win, d.dim, 1);
        let gb = &dout[b * d.filters * t..(b + 1) * d.filters * t];
        for (f, row) in gb.chunks(t).enumerate() {
            for &g in row {
                db[f] += g;
            }
        }
        let g = MatRef::new(gb, d.filters, t);
        gemm(T::one(), g, windows, T::one(), &mut dw);
        if let Some(dx) = dx.as_mut() {
            gemm(T::one(), g.t(), MatRef::new(w, d.filters, win), T::zero(), &mut dwin);
            let mut dpad = vec![T::zero(); d.padded() * d.dim];
            for i in 0..t {
                let dst = &mut dpad[i * d.dim..i * d.dim + win];
                for (acc, &v) in dst.iter_mut().zip(&dwin[i * win..(i + 1) * win]) {
                    *acc += v;
                }
            }
            let off = (d.height - 1) * d.dim;
            dx[b * d.len * d.dim..(b + 1) * d.len * d.dim].copy_from_slice(&dpad[off..off + d.len * d.dim]);
        }
    }
    (dx, dw, db)
}

/// Extents of a batched 2-D convolution with square kernels.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct Conv2dDims {
    pub batch: usize,
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl Conv2dDims {
    pub fn out_h(&self) -> usize {
        (self.h + 2 * self.pad - self.kernel) / self.stride + 1
    }

    pub fn out_w(&self) -> usize {
        (self.w + 2 * self.pad - self.kernel) / self.stride + 1
    }

    fn patch(&self) -> usize {
        self.c_in * self.kernel * self.kernel
    }

    fn in_plane(&self) -> usize {
        self.c_in * self.h * self.w
    }
}

/// Lowers one `[C_in, H, W]` image to a `[C_in*k*k, H_out*W_out]` patch matrix.
fn im2col<T: Scalar>(x: &[T], d: &Conv2dDims, cols: &mut [T]) {
    let (oh, ow) = (d.out_h(), d.out_w());
    let (k, s) = (d.kernel, d.stride);
    let pad = d.pad as isize;
    for c in 0..d.c_in {
        let plane = &x[c * d.h * d.w..(c + 1) * d.h * d.w];
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let dst = &mut cols[row * oh * ow..(row + 1) * oh * ow];
                for oy in 0..oh {
                    let iy = (oy * s + ky) as isize - pad;
                    let line = &mut dst[oy * ow..(oy + 1) * ow];
                    if iy < 0 || iy >= d.h as isize {
                        line.fill(T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * d.w..(iy as usize + 1) * d.w];
                    for (ox, v) in line.iter_mut().enumerate() {
                        let ix = (ox * s + kx) as isize - pad;
                        *v = if ix < 0 || ix >= d.w as isize {
                            T::zero()
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

fn col2im<T: Scalar>(cols: &[T], d: &Conv2dDims, dx: &mut [T]) {
    let (oh, ow) = (d.out_h(), d.out_w());
    let (k, s) = (d.kernel, d.stride);
    let pad = d.pad as isize;
    for c in 0..d.c_in {
        let plane = &mut dx[c * d.h * d.w..(c + 1) * d.h * d.w];
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let src = &cols[row * oh * ow..(row + 1) * oh * ow];
                for oy in 0..oh {
                    let iy = (oy * s + ky) as isize - pad;
                    if iy < 0 || iy >= d.h as isize {
                        continue;
                    }
                    for ox in 0..ow {
                        let ix = (ox * s + kx) as isize - pad;
                        if ix >= 0 && ix < d.w as isize {
                            plane[iy as usize * d.w + ix as usize] += src[oy * ow + ox];
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn conv2d_forward<T: Scalar>(x: &[T], w: &[T], bias: &[T], d: &Conv2dDims) -> Vec<T> {
    let hw = d.out_h() * d.out_w();
    let mut cols = vec![T::zero(); d.patch() * hw];
    let mut out = vec![T::zero(); d.batch * d.c_out * hw];
    for b in 0..d.batch {
        im2col(&x[b * d.in_plane()..(b + 1) * d.in_plane()], d, &mut cols);
        let ob = &mut out[b * d.c_out * hw..(b + 1) * d.c_out * hw];
        for (c, plane) in ob.chunks_mut(hw).enumerate() {
            plane.fill(bias[c]);
        }
        gemm(
            T::one(),
            MatRef::new(w, d.c_out, d.patch()),
            MatRef::new(&cols, d.patch(), hw),
            T::one(),
            ob,
        );
    }
    out
}

/// Returns `(dx, dw, dbias)`; `dx` is skipped when not requested.
pub(crate) fn conv2d_backward<T: Scalar>(
    x: &[T],
    w: &[T],
    dout: &[T],
    d: &Conv2dDims,
    need_dx: bool,
) -> (Option<Vec<T>>, Vec<T>, Vec<T>) {
    let hw = d.out_h() * d.out_w();
    let mut cols = vec![T::zero(); d.patch() * hw];
    let mut dw = vec![T::zero(); d.c_out * d.patch()];
    let mut db = vec![T::zero(); d.c_out];
    let mut dx = need_dx.then(|| vec![T::zero(); x.len()]);
    for b in 0..d.batch {
        let gb = &dout[b * d.c_out * hw..(b + 1) * d.c_out * hw];
        for (c, plane) in gb.chunks(hw).enumerate() {
            for &g in plane {
                db[c] += g;
            }
        }
        im2col(&x[b * d.in_plane()..(b + 1) * d.in_plane()], d, &mut cols);
        let g = MatRef::new(gb, d.c_out, hw);
        gemm(T::one(), g, MatRef::new(&cols, d.patch(), hw).t(), T::one(), &mut dw);
        if let Some(dx) = dx.as_mut() {
            gemm(T::one(), MatRef::new(w, d.c_out, d.patch()).t(), g, T::zero(), &mut cols);
            col2im(&cols, d, &mut dx[b * d.in_plane()..(b + 1) * d.in_plane()]);
        }
    }
    (dx, dw, db)
}
