//! Parameterized layers. Each layer owns ids into a [`ParamStore`] and
//! records its forward computation on a tape.

use serde::{Deserialize, Serialize};

use super::norm::BatchStats;
use super::params::{BoundParams, ParamId, ParamStore};
use crate::autodiff::{Tape, Var};
use crate::error::{ensure, Error, Result};
use crate::tensor::{random_init, Init, Rng, Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Train,
    Infer,
}

/// A group of `count` text filters of height `m` spanning the full
/// embedding width `d`, with one bias per filter.
#[derive(Clone, Debug)]
pub struct ConvTextFilter {
    pub height: usize,
    pub count: usize,
    pub weight: ParamId,
    pub bias: ParamId,
}

impl ConvTextFilter {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        height: usize,
        count: usize,
        dim: usize,
        rng: &mut Rng,
    ) -> Result<Self> {
        let w = random_init(rng, &[count, height, dim], Init::ScaledNormal { fan_in: height * dim })?;
        Ok(Self {
            height,
            count,
            weight: store.add(format!("{name}.weight"), w),
            bias: store.add(format!("{name}.bias"), Tensor::full(&[count], T::zero())?),
        })
    }

    /// `[B, L, d]` to `[B, count, L + m - 1]`.
    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, p: &BoundParams, x: Var) -> Result<Var> {
        tape.conv_text(x, p.var(self.weight), p.var(self.bias))
    }
}

/// Fully connected layer with weight rows `[n_out, n_in]`.
#[derive(Clone, Debug)]
pub struct DenseLayer {
    pub n_in: usize,
    pub n_out: usize,
    pub weight: ParamId,
    pub bias: ParamId,
}

impl DenseLayer {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, n_in: usize, n_out: usize, rng: &mut Rng) -> Result<Self> {
        let w = random_init(rng, &[n_out, n_in], Init::ScaledNormal { fan_in: n_in })?;
        Ok(Self {
            n_in,
            n_out,
            weight: store.add(format!("{name}.weight"), w),
            bias: store.add(format!("{name}.bias"), Tensor::full(&[n_out], T::zero())?),
        })
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, p: &BoundParams, x: Var) -> Result<Var> {
        tape.dense(x, p.var(self.weight), p.var(self.bias))
    }
}

/// Square-kernel 2-D convolution.
#[derive(Clone, Debug)]
pub struct Conv2dLayer {
    pub c_in: usize,
    pub c_out: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Conv2dLayer {
    /// A `kernel x kernel` convolution padded by `kernel / 2`, so stride 1
    /// keeps the spatial size and stride 2 yields `ceil(H / 2)`.
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        stride: usize,
        rng: &mut Rng,
    ) -> Result<Self> {
        ensure!(kernel % 2 == 1, Error::Config(format!("kernel size {kernel} must be odd")));
        let fan_in = c_in * kernel * kernel;
        let w = random_init(rng, &[c_out, c_in, kernel, kernel], Init::ScaledNormal { fan_in })?;
        Ok(Self {
            c_in,
            c_out,
            kernel,
            stride,
            pad: kernel / 2,
            weight: store.add(format!("{name}.weight"), w),
            bias: store.add(format!("{name}.bias"), Tensor::full(&[c_out], T::zero())?),
        })
    }

    pub fn out_size(&self, size: usize) -> usize {
        (size + 2 * self.pad - self.kernel) / self.stride + 1
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, p: &BoundParams, x: Var) -> Result<Var> {
        tape.conv2d(x, p.var(self.weight), p.var(self.bias), self.stride, self.pad)
    }
}

/// Per-channel batch normalization with running statistics kept in a
/// separate buffer store.
#[derive(Clone, Debug)]
pub struct BatchNormLayer {
    pub channels: usize,
    pub momentum: f64,
    pub eps: f64,
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
}

impl BatchNormLayer {
    pub fn new<T: Scalar>(
        params: &mut ParamStore<T>,
        buffers: &mut ParamStore<T>,
        name: &str,
        channels: usize,
        momentum: f64,
        eps: f64,
    ) -> Result<Self> {
        ensure!(eps > 0.0, Error::Config("batch norm epsilon must be positive".into()));
        ensure!(
            (0.0..1.0).contains(&momentum),
            Error::Config(format!("batch norm momentum {momentum} outside [0, 1)"))
        );
        Ok(Self {
            channels,
            momentum,
            eps,
            gamma: params.add(format!("{name}.gamma"), Tensor::full(&[channels], T::one())?),
            beta: params.add(format!("{name}.beta"), Tensor::full(&[channels], T::zero())?),
            running_mean: buffers.add(format!("{name}.running_mean"), Tensor::full(&[channels], T::zero())?),
            running_var: buffers.add(format!("{name}.running_var"), Tensor::full(&[channels], T::one())?),
        })
    }

    /// Train mode normalizes with batch statistics and returns them for
    /// [`BatchNormLayer::update_running`]; infer mode uses the running ones.
    pub fn forward<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        p: &BoundParams,
        buffers: &ParamStore<T>,
        x: Var,
        mode: Mode,
    ) -> Result<(Var, Option<BatchStats<T>>)> {
        let (g, b) = (p.var(self.gamma), p.var(self.beta));
        let eps = T::of(self.eps);
        match mode {
            Mode::Train => {
                let (y, stats) = tape.batch_norm_train(x, g, b, eps)?;
                Ok((y, Some(stats)))
            }
            Mode::Infer => {
                let mean = buffers.get(self.running_mean).data();
                let var = buffers.get(self.running_var).data();
                Ok((tape.batch_norm_infer(x, g, b, mean, var, eps)?, None))
            }
        }
    }

    /// `running <- momentum * running + (1 - momentum) * batch`.
    pub fn update_running<T: Scalar>(&self, buffers: &mut ParamStore<T>, stats: &BatchStats<T>) {
        let m = T::of(self.momentum);
        let blend = |run: &mut Tensor<T>, batch: &[T]| {
            for (r, &s) in run.data_mut().iter_mut().zip(batch) {
                *r = m * *r + (T::one() - m) * s;
            }
        };
        blend(buffers.get_mut(self.running_mean), &stats.mean);
        blend(buffers.get_mut(self.running_var), &stats.var);
    }
}

/// Rescales every row of `weight` (one row per output neuron) whose L2 norm
/// exceeds `bound` back onto the ball of radius `bound`.
pub fn max_norm_constrain<T: Scalar>(weight: &mut Tensor<T>, bound: f64) -> Result<()> {
    ensure!(bound > 0.0, Error::Config(format!("max-norm bound {bound} must be positive")));
    let cols = *weight.shape().last().expect("rank >= 1");
    for row in weight.data_mut().chunks_mut(cols) {
        let norm = row.iter().map(|v| v.f64() * v.f64()).sum::<f64>().sqrt();
        if norm > bound {
            let s = T::of(bound / norm);
            for v in row {
                *v *= s;
            }
        }
    }
    Ok(())
}
