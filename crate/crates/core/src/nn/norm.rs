//! Per-channel batch normalization over `[B, C, ...]` inputs.

use crate::tensor::Scalar;

#[derive(Clone, Copy, Debug)]
pub(crate) struct NormDims {
    pub batch: usize,
    pub channels: usize,
    /// Product of the trailing (spatial) extents.
    pub spatial: usize,
}

impl NormDims {
    fn count(&self) -> usize {
        self.batch * self.spatial
    }

    /// Visits every element of channel `c` as a flat index.
    fn indices(&self, c: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.batch).flat_map(move |b| {
            let base = (b * self.channels + c) * self.spatial;
            base..base + self.spatial
        })
    }
}

/// Cached state from a train-mode forward pass.
#[derive(Clone, Debug)]
pub(crate) struct NormCache<T> {
    pub xhat: Vec<T>,
    pub inv_std: Vec<T>,
}

/// Batch mean and unbiased variance per channel, for running averages.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

pub(crate) fn norm_train_forward<T: Scalar>(
    x: &[T],
    gamma: &[T],
    beta: &[T],
    eps: T,
    d: &NormDims,
) -> (Vec<T>, NormCache<T>, BatchStats<T>) {
    let n = T::of(d.count() as f64);
    let mut y = vec![T::zero(); x.len()];
    let mut xhat = vec![T::zero(); x.len()];
    let mut inv_std = Vec::with_capacity(d.channels);
    let mut stats = BatchStats {
        mean: Vec::with_capacity(d.channels),
        var: Vec::with_capacity(d.channels),
    };
    for c in 0..d.channels {
        let rough = d.indices(c).map(|i| x[i]).sum::<T>() / n;
        // One correction pass makes constant channels center to exactly zero.
        let mean = rough + d.indices(c).map(|i| x[i] - rough).sum::<T>() / n;
        let ss = d.indices(c).map(|i| (x[i] - mean) * (x[i] - mean)).sum::<T>();
        let var = ss / n;
        let is = T::one() / (var + eps).sqrt();
        for i in d.indices(c) {
            xhat[i] = (x[i] - mean) * is;
            y[i] = gamma[c] * xhat[i] + beta[c];
        }
        inv_std.push(is);
        stats.mean.push(mean);
        let unbiased = if d.count() > 1 {
            ss / T::of((d.count() - 1) as f64)
        } else {
            var
        };
        stats.var.push(unbiased);
    }
    (y, NormCache { xhat, inv_std }, stats)
}

/// Returns `(dx, dgamma, dbeta)`.
pub(crate) fn norm_train_backward<T: Scalar>(
    dy: &[T],
    gamma: &[T],
    cache: &NormCache<T>,
    d: &NormDims,
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let n = T::of(d.count() as f64);
    let mut dx = vec![T::zero(); dy.len()];
    let mut dgamma = vec![T::zero(); d.channels];
    let mut dbeta = vec![T::zero(); d.channels];
    for c in 0..d.channels {
        let (mut sum_dy, mut sum_dy_xhat) = (T::zero(), T::zero());
        for i in d.indices(c) {
            sum_dy += dy[i];
            sum_dy_xhat += dy[i] * cache.xhat[i];
        }
        dgamma[c] = sum_dy_xhat;
        dbeta[c] = sum_dy;
        let scale = gamma[c] * cache.inv_std[c] / n;
        for i in d.indices(c) {
            dx[i] = scale * (n * dy[i] - sum_dy - cache.xhat[i] * sum_dy_xhat);
        }
    }
    (dx, dgamma, dbeta)
}

pub(crate) fn norm_infer_forward<T: Scalar>(
    x: &[T],
    gamma: &[T],
    beta: &[T],
    mean: &[T],
    var: &[T],
    eps: T,
    d: &NormDims,
) -> Vec<T> {
    let mut y = vec![T::zero(); x.len()];
    for c in 0..d.channels {
        let is = T::one() / (var[c] + eps).sqrt();
        for i in d.indices(c) {
            y[i] = gamma[c] * (x[i] - mean[c]) * is + beta[c];
        }
    }
    y
}

/// Returns `(dx, dgamma, dbeta)` for the affine infer-mode transform.
#[allow(clippy::too_many_arguments)]
pub(crate) fn norm_infer_backward<T: Scalar>(
    dy: &[T],
    x: &[T],
    gamma: &[T],
    mean: &[T],
    var: &[T],
    eps: T,
    d: &NormDims,
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let mut dx = vec![T::zero(); dy.len()];
    let mut dgamma = vec![T::zero(); d.channels];
    let mut dbeta = vec![T::zero(); d.channels];
    for c in 0..d.channels {
        let is = T::one() / (var[c] + eps).sqrt();
        for i in d.indices(c) {
            dx[i] = dy[i] * gamma[c] * is;
            dgamma[c] += dy[i] * (x[i] - mean[c]) * is;
            dbeta[c] += dy[i];
        }
    }
    (dx, dgamma, dbeta)
}
