//! Class probabilities, the classification and pixel losses, and their
//! λ-weighted combination.
//!
//! The combined objective is `L0 + λ · P` where `L0` is the cross-entropy of
//! the softmax output and `P` is either the summed squared pixel error
//! ([`PixelLoss::Sum`]) or its per-element mean ([`PixelLoss::Mean`]).
//! Losses are written per sample; over a batch every term is averaged, so
//! λ keeps its meaning for any batch size.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{ensure, shape_err, Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Guard added inside the logarithm of the cross-entropy.
pub const LOG_EPS: f64 = 1e-12;

/// Row-wise softmax of a flat buffer with rows of length `k`, shifted by
/// the row maximum so large logits cannot overflow.
pub(crate) fn softmax_rows<T: Scalar>(x: &[T], k: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(x.len());
    for row in x.chunks(k) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let start = out.len();
        let mut total = T::zero();
        for &v in row {
            let e = (v - max).exp();
            total += e;
            out.push(e);
        }
        for p in &mut out[start..] {
            *p /= total;
        }
    }
    out
}

/// Softmax along the last axis.
pub fn softmax<T: Scalar>(logits: &Tensor<T>) -> Tensor<T> {
    let k = *logits.shape().last().expect("tensors have rank >= 1");
    Tensor::from_vec(logits.shape(), softmax_rows(logits.data(), k)).expect("same shape")
}

pub fn one_hot<T: Scalar>(label: usize, classes: usize) -> Result<Tensor<T>> {
    ensure!(label < classes, Error::Index { index: label, len: classes });
    let mut t = Tensor::full(&[classes], T::zero())?;
    t.data_mut()[label] = T::one();
    Ok(t)
}

/// `-sum_i y_i log(p_i + eps)` for a one-hot `y`.
pub fn cross_entropy<T: Scalar>(y: &Tensor<T>, p: &Tensor<T>) -> Result<T> {
    ensure!(
        y.shape() == p.shape(),
        shape_err!("labels {:?} and probabilities {:?} differ", y.shape(), p.shape())
    );
    let ones = y.data().iter().filter(|&&v| v == T::one()).count();
    let zeros = y.data().iter().filter(|&&v| v == T::zero()).count();
    ensure!(
        ones == 1 && ones + zeros == y.len(),
        Error::Contract("label vector is not one-hot".into())
    );
    let mut total = T::zero();
    for (&yi, &pi) in y.data().iter().zip(p.data()) {
        if yi != T::zero() {
            total -= yi * (pi + T::of(LOG_EPS)).ln();
        }
    }
    Ok(total)
}

/// Sum of squared differences over every element.
pub fn pixel_loss_sum<T: Scalar>(generated: &Tensor<T>, target: &Tensor<T>) -> Result<T> {
    ensure!(
        generated.shape() == target.shape(),
        shape_err!("image shapes {:?} and {:?} differ", generated.shape(), target.shape())
    );
    let mut total = T::zero();
    for (&a, &b) in generated.data().iter().zip(target.data()) {
        total += (a - b) * (a - b);
    }
    Ok(total)
}

/// [`pixel_loss_sum`] divided by the element count `N = C * H * W`.
pub fn pixel_loss_mean<T: Scalar>(generated: &Tensor<T>, target: &Tensor<T>) -> Result<T> {
    Ok(pixel_loss_sum(generated, target)? / T::of(generated.len() as f64))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PixelLoss {
    Sum,
    Mean,
}

impl std::str::FromStr for PixelLoss {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sum" => Ok(PixelLoss::Sum),
            "mean" => Ok(PixelLoss::Mean),
            other => Err(Error::Config(format!("unknown loss variant `{other}` (expected sum or mean)"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub variant: PixelLoss,
    pub lambda: f64,
}

impl LossConfig {
    /// Sum variant at λ = 0.8, the best value of the validation sweep.
    pub const SUM_DEFAULT_LAMBDA: f64 = 0.8;
    /// Mean variant at λ = 6, the setting used for exporting encodings.
    pub const MEAN_DEFAULT_LAMBDA: f64 = 6.0;

    pub fn new(variant: PixelLoss, lambda: f64) -> Result<Self> {
        let cfg = Self { variant, lambda };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn default_for(variant: PixelLoss) -> Self {
        let lambda = match variant {
            PixelLoss::Sum => Self::SUM_DEFAULT_LAMBDA,
            PixelLoss::Mean => Self::MEAN_DEFAULT_LAMBDA,
        };
        Self { variant, lambda }
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.lambda.is_finite() && self.lambda >= 0.0,
            Error::Config(format!("lambda must be a finite non-negative number, got {}", self.lambda))
        );
        Ok(())
    }
}

impl Default for LossConfig {
    fn default() -> Self {
        Self::default_for(PixelLoss::Sum)
    }
}

/// Values of the loss terms; `total == l0 + lambda * pixel` as evaluated.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct LossBreakdown {
    pub l0: f64,
    pub pixel: f64,
    pub total: f64,
}

#[derive(Clone, Copy, Debug)]
pub struct LossVars {
    pub total: Var,
    pub l0: Var,
    pub pixel: Var,
}

/// Records the combined loss for a batch on `tape`.
///
/// `logits` is `[B, K]`, `image` and `targets` are `[B, C, H, W]`.
pub fn combined_loss<T: Scalar>(
    tape: &mut Tape<T>,
    logits: Var,
    labels: &[usize],
    image: Var,
    targets: &Tensor<T>,
    cfg: &LossConfig,
) -> Result<(LossVars, LossBreakdown)> {
    cfg.validate()?;
    let shape = tape.value(image).shape().to_vec();
    ensure!(shape.len() >= 2, shape_err!("image batch must be [B, ...], got {shape:?}"));
    let batch = shape[0];
    let per_image: usize = shape[1..].iter().product();
    let probs = tape.softmax(logits)?;
    let l0 = tape.cross_entropy(probs, labels)?;
    let norm = match cfg.variant {
        PixelLoss::Sum => batch as f64,
        PixelLoss::Mean => (batch * per_image) as f64,
    };
    let pixel = tape.sq_err(image, targets, T::of(1.0 / norm))?;
    let weighted = tape.scale(pixel, T::of(cfg.lambda));
    let total = tape.add(l0, weighted)?;
    let read = |v: Var| tape.value(v).data()[0].f64();
    let breakdown = LossBreakdown {
        l0: read(l0),
        pixel: read(pixel),
        total: read(total),
    };
    ensure!(
        breakdown.total.is_finite(),
        Error::Numeric(format!("loss is not finite: {breakdown:?}"))
    );
    Ok((LossVars { total, l0, pixel }, breakdown))
}
