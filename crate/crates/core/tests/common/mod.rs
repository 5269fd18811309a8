//! Synthetic overfit dataset shared by the integration tests: four classes
//! of four samples, each with a distinct five-token text and a distinct
//! solid-color 100x100 target.

#![allow(dead_code)]

use pictext_core::data::{Manifest, ManifestRow, Sample};
use pictext_core::text::{encode, tokenize};
use pictext_core::train::TrainConfig;
use pictext_core::{LossConfig, ModelConfig, PixelLoss, Tensor, Vocabulary};

pub const CLASSES: [&str; 4] = ["hammer", "screw", "drill", "saw"];
const ADJECTIVES: [&str; 4] = ["heavy", "small", "red", "cordless"];
const MATERIALS: [&str; 4] = ["steel", "brass", "wood", "plastic"];
const SIZES: [&str; 4] = ["mini", "medium", "large", "xl"];
const BRANDS: [&str; 4] = ["acme", "bolt", "forge", "tyne"];
/// Class base colors; each sample shifts its class color by a small shade
/// so targets are distinct but cluster by class.
const PALETTE: [[f32; 3]; 4] = [[0.85, 0.2, 0.2], [0.2, 0.8, 0.25], [0.2, 0.25, 0.85], [0.8, 0.75, 0.2]];

pub struct Synthetic {
    pub texts: Vec<String>,
    pub labels: Vec<usize>,
    pub colors: Vec<[f32; 3]>,
    pub vocab: Vocabulary,
    pub samples: Vec<Sample>,
    pub model: ModelConfig,
}

pub fn text(class: usize, sample: usize) -> String {
    format!(
        "{} {} {} {} {}",
        CLASSES[class],
        ADJECTIVES[sample],
        MATERIALS[(sample + class) % 4],
        SIZES[(2 * sample + class) % 4],
        BRANDS[class]
    )
}

pub fn solid(color: [f32; 3], size: usize) -> Tensor<f32> {
    let plane = size * size;
    let mut data = vec![0.0; 3 * plane];
    for c in 0..3 {
        data[c * plane..(c + 1) * plane].fill(color[c]);
    }
    Tensor::from_vec(&[3, size, size], data).unwrap()
}

/// Full-depth network with text and generator widths divided by 8,
/// keeping the 7 to 100 spatial ladder.
pub fn overfit_model_config(vocab_size: usize) -> ModelConfig {
    let mut cfg = ModelConfig::full(vocab_size, CLASSES.len()).scaled(8);
    cfg.seq_len = 8;
    cfg
}

pub fn synthetic() -> Synthetic {
    let mut texts = Vec::new();
    let mut labels = Vec::new();
    let mut colors = Vec::new();
    for class in 0..4 {
        for sample in 0..4 {
            texts.push(text(class, sample));
            labels.push(class);
            let shade = 0.05 * sample as f32 - 0.075;
            colors.push(PALETTE[class].map(|v| v + shade));
        }
    }
    let corpus: Vec<Vec<String>> = texts.iter().map(|t| tokenize(t)).collect();
    let vocab = Vocabulary::build(&corpus, 1).unwrap();
    let model = overfit_model_config(vocab.len());
    let size = model.image_size();
    let samples = corpus
        .iter()
        .zip(&labels)
        .zip(&colors)
        .map(|((toks, &label), &color)| {
            Sample::new(encode(toks, &vocab, model.seq_len).unwrap(), label, solid(color, size)).unwrap()
        })
        .collect();
    Synthetic {
        texts,
        labels,
        colors,
        vocab,
        samples,
        model,
    }
}

impl Synthetic {
    /// A manifest over the texts; image paths are placeholders.
    pub fn manifest(&self) -> Manifest {
        Manifest::from_rows(
            self.texts
                .iter()
                .zip(&self.labels)
                .enumerate()
                .map(|(i, (t, &l))| ManifestRow {
                    label: CLASSES[l].to_string(),
                    image_ref: format!("{i}.png"),
                    image_path: format!("{i}.png").into(),
                    text: t.clone(),
                })
                .collect(),
        )
    }
}

pub fn overfit_train_config(lambda: f64, epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size: 16,
        seed: 11,
        loss: LossConfig {
            variant: PixelLoss::Sum,
            lambda,
        },
        ..TrainConfig::default()
    }
}
