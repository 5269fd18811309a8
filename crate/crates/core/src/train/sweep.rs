use std::path::{Path, PathBuf};

use super::{evaluate, train, TrainConfig};
use crate::data::{save_image, tile_images, Sample};
use crate::error::{ensure, Error, Result};
use crate::model::{Model, ModelConfig};
use crate::tensor::{Rng, Tensor};
use crate::text::TokenizedDoc;

#[derive(Clone, Debug, PartialEq)]
pub struct SweepConfig {
    pub lambdas: Vec<f64>,
    pub runs: usize,
    pub epochs: usize,
    /// Optimizer, batch and loss-variant settings; `loss.lambda`, `epochs`
    /// and `seed` are overridden per run (run `r` uses `seed + r`).
    pub base: TrainConfig,
    /// Samples shown in each per-lambda image grid.
    pub grid_samples: usize,
}

/// One training run of the sweep.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub lambda: f64,
    pub run: usize,
    pub epochs: usize,
    pub val_acc: f64,
    /// Pixel MSE of generated vs target images on the training split.
    pub pixel_mse: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepSummary {
    pub lambda: f64,
    pub runs: usize,
    pub val_acc_mean: f64,
    /// Sample standard deviation; zero for a single run.
    pub val_acc_std: f64,
    pub pixel_mse_mean: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
    pub summary: Vec<SweepSummary>,
    /// Files written, if an output directory was given.
    pub files: Vec<PathBuf>,
}

impl SweepResult {
    pub fn runs_csv(&self) -> String {
        let mut s = String::from("lambda,run,epochs,val_acc\n");
        for r in &self.rows {
            s.push_str(&format!("{},{},{},{}\n", r.lambda, r.run, r.epochs, r.val_acc));
        }
        s
    }

    pub fn summary_csv(&self) -> String {
        let mut s = String::from("lambda,runs,val_acc_mean,val_acc_std,pixel_mse_mean\n");
        for r in &self.summary {
            s.push_str(&format!(
                "{},{},{},{},{}\n",
                r.lambda, r.runs, r.val_acc_mean, r.val_acc_std, r.pixel_mse_mean
            ));
        }
        s
    }
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Trains `runs` fresh models for every lambda and measures validation
/// accuracy. With `out_dir`, writes `sweep.csv`, `sweep_summary.csv` and
/// `grid_lambda_<lambda>.png` (images of the first run on the first
/// validation samples).
pub fn lambda_sweep(
    model_cfg: &ModelConfig,
    train_set: &[Sample],
    val_set: &[Sample],
    cfg: &SweepConfig,
    out_dir: Option<&Path>,
) -> Result<SweepResult> {
    ensure!(!cfg.lambdas.is_empty(), Error::Config("lambda list is empty".into()));
    ensure!(cfg.runs >= 1, Error::Config("sweep needs at least one run per lambda".into()));
    ensure!(!val_set.is_empty(), Error::Config("sweep needs a validation set".into()));
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut rows = Vec::new();
    let mut summary = Vec::new();
    let mut files = Vec::new();
    for &lambda in &cfg.lambdas {
        let mut accs = Vec::with_capacity(cfg.runs);
        let mut mses = Vec::with_capacity(cfg.runs);
        for run in 0..cfg.runs {
            let mut tc = cfg.base.clone();
            tc.loss.lambda = lambda;
            tc.epochs = cfg.epochs;
            tc.seed = cfg.base.seed + run as u64;
            let mut model = Model::<f32>::build(model_cfg.clone(), &mut Rng::seed(tc.seed))?;
            train(&mut model, train_set, None, &tc)?;
            let val_acc = evaluate(&model, val_set)?.accuracy;
            let pixel_mse = evaluate(&model, train_set)?.pixel_mse;
            accs.push(val_acc);
            mses.push(pixel_mse);
            rows.push(SweepRow {
                lambda,
                run,
                epochs: cfg.epochs,
                val_acc,
                pixel_mse,
            });
            if run == 0 && cfg.grid_samples > 0 {
                if let Some(dir) = out_dir {
                    let path = dir.join(format!("grid_lambda_{lambda}.png"));
                    write_grid(&model, val_set, cfg.grid_samples, &path)?;
                    files.push(path);
                }
            }
        }
        let (val_acc_mean, val_acc_std) = mean_std(&accs);
        summary.push(SweepSummary {
            lambda,
            runs: cfg.runs,
            val_acc_mean,
            val_acc_std,
            pixel_mse_mean: mean_std(&mses).0,
        });
    }
    let mut result = SweepResult { rows, summary, files };
    if let Some(dir) = out_dir {
        for (name, text) in [("sweep.csv", result.runs_csv()), ("sweep_summary.csv", result.summary_csv())] {
            let path = dir.join(name);
            std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
            result.files.push(path);
        }
    }
    Ok(result)
}

fn write_grid(model: &Model<f32>, samples: &[Sample], n: usize, path: &Path) -> Result<()> {
    let docs: Vec<&TokenizedDoc> = samples.iter().take(n).map(|s| &s.doc).collect();
    let (images, _) = model.infer_batch(&docs)?;
    let shape = model.config().image_shape();
    let per = images.len() / docs.len();
    let tiles = (0..docs.len())
        .map(|i| Tensor::from_vec(&shape, images.data()[i * per..(i + 1) * per].to_vec()))
        .collect::<Result<Vec<_>>>()?;
    save_image(&tile_images(&tiles, 2)?, path)
}
