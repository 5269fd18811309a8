//! Resolution of model and training settings: built-in defaults, then the
//! `--config` TOML file, then command-line flags.

use std::path::Path;

use pictext_core::train::TrainConfig;
use pictext_core::{Error, LossConfig, ModelConfig, Result};
use serde::{Deserialize, Serialize};

use crate::args::ModelArgs;

/// `[model]` table. Every field is optional.
#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelOverlay {
    pub tiny: Option<bool>,
    pub scale: Option<usize>,
    pub embed_dim: Option<usize>,
    pub seq_len: Option<usize>,
    pub filter_heights: Option<Vec<usize>>,
    pub filters_per_height: Option<usize>,
    pub generator_channels: Option<Vec<usize>>,
    pub generator_sizes: Option<Vec<usize>>,
    pub classifier_channels: Option<Vec<usize>>,
    pub fc_sizes: Option<Vec<usize>>,
    pub kernel_size: Option<usize>,
    pub dropout_p: Option<f64>,
    pub max_norm: Option<f64>,
    pub bn_momentum: Option<f64>,
    pub bn_eps: Option<f64>,
    pub min_count: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConfigFile {
    pub model: ModelOverlay,
    pub train: Option<toml::Table>,
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.to_owned(),
            source: e,
        })?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }
}

/// Everything needed to start a run except the vocabulary size and class
/// count, which come from the data.
#[derive(Debug, Clone, Serialize)]
pub struct Resolved {
    /// Model template; `vocab_size` and `num_classes` are filled in later.
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub min_count: usize,
}

impl Resolved {
    pub fn model_for(&self, vocab_size: usize, num_classes: usize) -> ModelConfig {
        ModelConfig {
            vocab_size,
            num_classes,
            ..self.model.clone()
        }
    }
}

pub fn resolve(args: &ModelArgs) -> Result<Resolved> {
    let file = match &args.config {
        Some(p) => ConfigFile::load(p)?,
        None => ConfigFile::default(),
    };
    let o = &file.model;

    let tiny = args.tiny || o.tiny.unwrap_or(false);
    let mut model = if tiny {
        ModelConfig::tiny(0, 0)
    } else {
        ModelConfig::full(0, 0)
    };
    if let Some(f) = args.scale.or(o.scale) {
        model = model.scaled(f);
    }
    macro_rules! overlay {
        ($($field:ident),*) => {$(
            if let Some(v) = &o.$field {
                model.$field = v.clone();
            }
        )*};
    }
    overlay!(
        embed_dim,
        seq_len,
        filter_heights,
        filters_per_height,
        generator_channels,
        generator_sizes,
        classifier_channels,
        fc_sizes,
        kernel_size,
        dropout_p,
        max_norm,
        bn_momentum,
        bn_eps
    );
    if let Some(l) = args.seq_len {
        model.seq_len = l;
    }

    let mut train: TrainConfig = match &file.train {
        Some(table) => table
            .clone()
            .try_into()
            .map_err(|e| Error::Config(format!("[train] table: {e}")))?,
        None => TrainConfig::default(),
    };
    if let Some(variant) = args.loss {
        // Switching variant without a lambda picks that variant's default.
        if variant != train.loss.variant && args.lambda.is_none() {
            train.loss = LossConfig::default_for(variant);
        }
        train.loss.variant = variant;
    }
    if let Some(l) = args.lambda {
        train.loss.lambda = l;
    }
    if let Some(e) = args.epochs {
        train.epochs = e;
    }
    if let Some(b) = args.batch_size {
        train.batch_size = b;
    }
    if let Some(lr) = args.lr {
        train.lr = lr;
    }
    if let Some(s) = args.seed {
        train.seed = s;
    }
    train.validate()?;
    Ok(Resolved {
        model,
        train,
        min_count: args.min_count.or(o.min_count).unwrap_or(1),
    })
}
