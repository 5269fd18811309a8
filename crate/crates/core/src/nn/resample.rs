use crate::tensor::{first_argmax, Scalar};

/// Source index of destination `i` when resizing `from -> to` by
/// nearest-neighbor: `floor(i * from / to)`.
#[inline]
pub(crate) fn nearest_source(i: usize, from: usize, to: usize) -> usize {
    i * from / to
}

/// Upsamples `planes` independent `h x w` planes to `oh x ow`.
pub(crate) fn upsample_forward<T: Scalar>(x: &[T], planes: usize, h: usize, w: usize, oh: usize, ow: usize) -> Vec<T> {
    let cols: Vec<usize> = (0..ow).map(|j| nearest_source(j, w, ow)).collect();
    let mut out = Vec::with_capacity(planes * oh * ow);
    for p in 0..planes {
        let plane = &x[p * h * w..(p + 1) * h * w];
        for i in 0..oh {
            let row = &plane[nearest_source(i, h, oh) * w..][..w];
            out.extend(cols.iter().map(|&j| row[j]));
        }
    }
    out
}

pub(crate) fn upsample_backward<T: Scalar>(
    dout: &[T],
    planes: usize,
    h: usize,
    w: usize,
    oh: usize,
    ow: usize,
) -> Vec<T> {
    let cols: Vec<usize> = (0..ow).map(|j| nearest_source(j, w, ow)).collect();
    let mut dx = vec![T::zero(); planes * h * w];
    for p in 0..planes {
        let plane = &mut dx[p * h * w..(p + 1) * h * w];
        for i in 0..oh {
            let src = &dout[(p * oh + i) * ow..][..ow];
            let row = &mut plane[nearest_source(i, h, oh) * w..][..w];
            for (&j, &g) in cols.iter().zip(src) {
                row[j] += g;
            }
        }
    }
    dx
}

/// Max over the last axis of `rows x len`; returns values and the first
/// maximal flat index of every row.
pub(crate) fn max_over_time_forward<T: Scalar>(x: &[T], len: usize) -> (Vec<T>, Vec<usize>) {
    x.chunks(len)
        .enumerate()
        .map(|(r, row)| {
            let i = first_argmax(row);
            (row[i], r * len + i)
        })
        .unzip()
}
