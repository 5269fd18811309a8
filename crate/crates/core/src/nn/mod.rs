//! Differentiable building blocks.
//!
//! The free functions here are single-sample, non-differentiable
//! conveniences over the same kernels the tape records; models use the
//! layer types together with [`Tape`].

pub(crate) mod conv;
mod layers;
pub(crate) mod norm;
mod params;
pub(crate) mod resample;

pub use layers::{max_norm_constrain, BatchNormLayer, Conv2dLayer, ConvTextFilter, DenseLayer, Mode};
pub use norm::BatchStats;
pub use params::{BoundParams, ParamId, ParamStore};

use crate::autodiff::Tape;
use crate::error::{ensure, shape_err, Error, Result};
use crate::tensor::{Rng, Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Sigmoid,
}

fn with_batch<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let mut shape = vec![1];
    shape.extend_from_slice(x.shape());
    x.clone().reshape(&shape)
}

fn drop_batch<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    x.clone().reshape(&x.shape()[1..])
}

/// Full 1-D convolution of a sentence matrix `[L, d]` with filters
/// `[F, m, d]`, giving `[F, L + m - 1]`.
pub fn conv_text<T: Scalar>(s: &Tensor<T>, weight: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    ensure!(s.rank() == 2, shape_err!("sentence matrix must be [L, d], got {:?}", s.shape()));
    let mut tape = Tape::new();
    let x = tape.constant(with_batch(s)?);
    let w = tape.constant(weight.clone());
    let b = tape.constant(bias.clone());
    let y = tape.conv_text(x, w, b)?;
    drop_batch(tape.value(y))
}

/// Row maxima of `[F, T]`.
pub fn max_over_time<T: Scalar>(c: &Tensor<T>) -> Result<Tensor<T>> {
    ensure!(c.rank() == 2, shape_err!("expected [F, T], got {:?}", c.shape()));
    c.max_axis(1)
}

/// `W x + b` for `x [n_in]`, `W [n_out, n_in]`.
pub fn dense<T: Scalar>(x: &Tensor<T>, weight: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    ensure!(x.rank() == 1, shape_err!("dense input must be a vector, got {:?}", x.shape()));
    let mut tape = Tape::new();
    let xv = tape.constant(with_batch(x)?);
    let w = tape.constant(weight.clone());
    let b = tape.constant(bias.clone());
    let y = tape.dense(xv, w, b)?;
    drop_batch(tape.value(y))
}

pub fn activation<T: Scalar>(kind: Activation, x: &Tensor<T>) -> Tensor<T> {
    match kind {
        Activation::Relu => x.map(|v| v.max(T::zero())),
        Activation::Sigmoid => x.map(crate::autodiff::sigmoid),
    }
}

/// Nearest-neighbor resize of `[C, H, W]`: `out[c, i, j] =
/// x[c, floor(i H / H'), floor(j W / W')]`.
pub fn upsample_nn<T: Scalar>(x: &Tensor<T>, target: (usize, usize)) -> Result<Tensor<T>> {
    ensure!(x.rank() == 3, shape_err!("expected [C, H, W], got {:?}", x.shape()));
    let mut tape = Tape::new();
    let xv = tape.constant(with_batch(x)?);
    let y = tape.upsample(xv, target)?;
    drop_batch(tape.value(y))
}

/// Cross-correlation of `[C_in, H, W]` with `[C_out, C_in, k, k]`.
pub fn conv2d<T: Scalar>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
    stride: usize,
    pad: usize,
) -> Result<Tensor<T>> {
    ensure!(x.rank() == 3, shape_err!("expected [C, H, W], got {:?}", x.shape()));
    let mut tape = Tape::new();
    let xv = tape.constant(with_batch(x)?);
    let w = tape.constant(weight.clone());
    let b = tape.constant(bias.clone());
    let y = tape.conv2d(xv, w, b, stride, pad)?;
    drop_batch(tape.value(y))
}

/// Batch normalization of `[B, C, ...]`. Train mode uses batch statistics,
/// returns them, and requires `B >= 2`; infer mode uses `running`.
pub fn batch_norm<T: Scalar>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    running: (&Tensor<T>, &Tensor<T>),
    eps: f64,
    mode: Mode,
) -> Result<(Tensor<T>, Option<BatchStats<T>>)> {
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let g = tape.constant(gamma.clone());
    let b = tape.constant(beta.clone());
    let (y, stats) = match mode {
        Mode::Train => {
            let (y, s) = tape.batch_norm_train(xv, g, b, T::of(eps))?;
            (y, Some(s))
        }
        Mode::Infer => (
            tape.batch_norm_infer(xv, g, b, running.0.data(), running.1.data(), T::of(eps))?,
            None,
        ),
    };
    Ok((tape.value(y).clone(), stats))
}

/// Inverted dropout; identity in infer mode.
pub fn dropout<T: Scalar>(x: &Tensor<T>, p: f64, mode: Mode, rng: &mut Rng) -> Result<Tensor<T>> {
    ensure!(
        (0.0..1.0).contains(&p),
        Error::Config(format!("dropout rate {p} outside [0, 1)"))
    );
    if mode == Mode::Infer || p == 0.0 {
        return Ok(x.clone());
    }
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let y = tape.dropout(xv, p, rng)?;
    Ok(tape.value(y).clone())
}
