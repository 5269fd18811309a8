//! Optimization loop, metrics, checkpoints and the lambda sweep.

mod adam;
mod checkpoint;
mod sweep;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use checkpoint::{Checkpoint, CHECKPOINT_VERSION};
pub use sweep::{lambda_sweep, SweepConfig, SweepResult, SweepRow, SweepSummary};

use serde::{Deserialize, Serialize};

use crate::autodiff::Tape;
use crate::data::Sample;
use crate::error::{ensure, shape_err, Error, Result};
use crate::loss::{combined_loss, LossConfig};
use crate::model::Model;
use crate::nn::Mode;
use crate::tensor::{Rng, Scalar, Tensor};
use crate::text::TokenizedDoc;

/// Batch size used for inference-only passes.
const EVAL_BATCH: usize = 32;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub loss: LossConfig,
    pub shuffle: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let adam = AdamConfig::default();
        Self {
            lr: adam.lr,
            beta1: adam.beta1,
            beta2: adam.beta2,
            eps: adam.eps,
            epochs: 100,
            batch_size: 32,
            seed: 0,
            loss: LossConfig::default(),
            shuffle: true,
        }
    }
}

impl TrainConfig {
    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.adam().validate()?;
        self.loss.validate()?;
        ensure!(
            self.batch_size >= 2,
            Error::Config(format!("batch size {} is below 2, which batch normalization needs", self.batch_size))
        );
        Ok(())
    }
}

/// Per-epoch record. Loss values are sample-weighted means over the
/// epoch's batches; accuracies are measured in infer mode after the epoch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub loss_total: f64,
    pub loss_l0: f64,
    pub loss_pixel: f64,
    pub train_acc: f64,
    pub val_acc: Option<f64>,
}

pub const METRICS_HEADER: &str = "epoch,loss_total,loss_l0,loss_pixel,train_acc,val_acc";

/// Metrics CSV; an absent validation accuracy is an empty field.
pub fn metrics_csv(history: &[EpochMetrics]) -> String {
    let mut s = String::from(METRICS_HEADER);
    s.push('\n');
    for m in history {
        let val = m.val_acc.map(|v| v.to_string()).unwrap_or_default();
        s.push_str(&format!(
            "{},{},{},{},{},{}\n",
            m.epoch, m.loss_total, m.loss_l0, m.loss_pixel, m.train_acc, val
        ));
    }
    s
}

/// Optimizer state carried across epochs; together with the model this is
/// everything needed to resume a run exactly.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState<T: Scalar> {
    pub adam: AdamState<T>,
    pub rng: Rng,
    /// Completed epochs.
    pub epoch: usize,
    pub history: Vec<EpochMetrics>,
}

impl<T: Scalar> TrainState<T> {
    /// Fresh state; shuffling and dropout draw from stream 1 of `cfg.seed`
    /// (stream 0 is left for parameter initialization).
    pub fn new(model: &Model<T>, cfg: &TrainConfig) -> Self {
        Self {
            adam: AdamState::new(model.params()),
            rng: Rng::seed(cfg.seed).fork(1),
            epoch: 0,
            history: Vec::new(),
        }
    }

    /// Trains until `cfg.epochs` epochs are complete and returns the new
    /// records.
    pub fn run(
        &mut self,
        model: &mut Model<T>,
        train: &[Sample],
        val: Option<&[Sample]>,
        cfg: &TrainConfig,
    ) -> Result<Vec<EpochMetrics>> {
        let start = self.history.len();
        while self.epoch < cfg.epochs {
            self.run_epoch(model, train, val, cfg)?;
        }
        Ok(self.history[start..].to_vec())
    }

    pub fn run_epoch(
        &mut self,
        model: &mut Model<T>,
        train: &[Sample],
        val: Option<&[Sample]>,
        cfg: &TrainConfig,
    ) -> Result<EpochMetrics> {
        cfg.validate()?;
        ensure!(!train.is_empty(), Error::Config("training set is empty".into()));
        ensure!(
            train.len() >= 2,
            Error::Config("training needs at least two samples for batch normalization".into())
        );
        let mut order: Vec<usize> = (0..train.len()).collect();
        if cfg.shuffle {
            self.rng.shuffle(&mut order);
        }
        let mut batches: Vec<&[usize]> = order.chunks(cfg.batch_size).collect();
        // A lone trailing sample cannot be batch-normalized; fold it into
        // the previous batch.
        if batches.len() > 1 && batches.last().map(|b| b.len()) == Some(1) {
            batches.pop();
            let n = batches.len();
            batches[n - 1] = &order[(n - 1) * cfg.batch_size..];
        }

        let (mut total, mut l0, mut pixel) = (0.0, 0.0, 0.0);
        for batch in batches {
            let b = self.step(model, train, batch, cfg)?;
            let w = batch.len() as f64;
            total += b.total * w;
            l0 += b.l0 * w;
            pixel += b.pixel * w;
        }
        let n = train.len() as f64;
        self.epoch += 1;
        let metrics = EpochMetrics {
            epoch: self.epoch,
            loss_total: total / n,
            loss_l0: l0 / n,
            loss_pixel: pixel / n,
            train_acc: evaluate_accuracy(model, train)?,
            val_acc: val.map(|v| evaluate_accuracy(model, v)).transpose()?,
        };
        self.history.push(metrics.clone());
        Ok(metrics)
    }

    fn step(
        &mut self,
        model: &mut Model<T>,
        samples: &[Sample],
        batch: &[usize],
        cfg: &TrainConfig,
    ) -> Result<crate::loss::LossBreakdown> {
        let docs: Vec<&TokenizedDoc> = batch.iter().map(|&i| &samples[i].doc).collect();
        let labels: Vec<usize> = batch.iter().map(|&i| samples[i].label).collect();
        let targets = stack_targets(model, samples, batch)?;
        let mut tape = Tape::new();
        let (out, params) = model.forward_batch(&mut tape, &docs, Mode::Train, Some(&mut self.rng))?;
        let (loss, breakdown) = combined_loss(&mut tape, out.logits, &labels, out.image, &targets, &cfg.loss)?;
        let mut grads = tape.backward(loss.total)?;
        let grads = params.gradients(&tape, &mut grads);
        drop(tape);
        adam_step(model.params_mut(), &grads, &mut self.adam, &cfg.adam())?;
        model.apply_constraints()?;
        model.update_running_stats(&out.stats);
        Ok(breakdown)
    }
}

fn stack_targets<T: Scalar>(model: &Model<T>, samples: &[Sample], batch: &[usize]) -> Result<Tensor<T>> {
    let shape = model.config().image_shape();
    let mut data = Vec::with_capacity(batch.len() * shape.iter().product::<usize>());
    for &i in batch {
        let img = &samples[i].image;
        ensure!(
            img.shape() == shape,
            shape_err!("target image {:?} does not match model output {:?}", img.shape(), shape)
        );
        ensure!(
            samples[i].label < model.config().num_classes,
            Error::Index {
                index: samples[i].label,
                len: model.config().num_classes
            }
        );
        data.extend(img.data().iter().map(|&v| T::of(f64::from(v))));
    }
    Tensor::from_vec(&[batch.len(), shape[0], shape[1], shape[2]], data)
}

/// Trains a fresh run of `cfg.epochs` epochs and returns its history.
/// Zero epochs leaves the model untouched.
pub fn train<T: Scalar>(
    model: &mut Model<T>,
    train: &[Sample],
    val: Option<&[Sample]>,
    cfg: &TrainConfig,
) -> Result<Vec<EpochMetrics>> {
    cfg.validate()?;
    ensure!(!train.is_empty(), Error::Config("training set is empty".into()));
    TrainState::new(model, cfg).run(model, train, val, cfg)
}

/// Infer-mode quality measures over a sample set.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Evaluation {
    pub accuracy: f64,
    /// Mean squared error per pixel value between generated and target images.
    pub pixel_mse: f64,
    /// Mean absolute error per pixel value.
    pub pixel_mae: f64,
}

pub fn evaluate<T: Scalar>(model: &Model<T>, samples: &[Sample]) -> Result<Evaluation> {
    ensure!(!samples.is_empty(), Error::Config("cannot evaluate on an empty set".into()));
    let (mut correct, mut se, mut ae, mut count) = (0usize, 0.0, 0.0, 0usize);
    for chunk in samples.chunks(EVAL_BATCH) {
        let docs: Vec<&TokenizedDoc> = chunk.iter().map(|s| &s.doc).collect();
        let (images, logits) = model.infer_batch(&docs)?;
        let k = model.config().num_classes;
        let per = images.len() / chunk.len();
        for (j, s) in chunk.iter().enumerate() {
            if crate::tensor::first_argmax(&logits.data()[j * k..(j + 1) * k]) == s.label {
                correct += 1;
            }
            if s.image.len() == per {
                for (g, &t) in images.data()[j * per..(j + 1) * per].iter().zip(s.image.data()) {
                    let d = g.f64() - f64::from(t);
                    se += d * d;
                    ae += d.abs();
                }
                count += per;
            }
        }
    }
    let count = count.max(1) as f64;
    Ok(Evaluation {
        accuracy: correct as f64 / samples.len() as f64,
        pixel_mse: se / count,
        pixel_mae: ae / count,
    })
}

/// Fraction of samples whose highest logit is the true label.
pub fn evaluate_accuracy<T: Scalar>(model: &Model<T>, samples: &[Sample]) -> Result<f64> {
    Ok(evaluate(model, samples)?.accuracy)
}
