//! Manifest ingestion, image files, token mixing and encoding export.

mod export;
mod image;
mod manifest;
mod mix;

pub use export::{export_encodings, sanitize_label, ExportReport};
pub use image::{load_image, save_image, tile_images};
pub use manifest::{load_manifest, Manifest, ManifestRow};
pub use mix::{mix_tokens, MixSpec};

use crate::error::{ensure, shape_err, Error, Result};
use crate::model::IMAGE_CHANNELS;
use crate::tensor::{Rng, Tensor};
use crate::text::{encode, tokenize, TokenizedDoc, Vocabulary};

/// One training example.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub doc: TokenizedDoc,
    pub label: usize,
    /// Target image `[3, H, W]`, values in `[0, 1]`.
    pub image: Tensor<f32>,
}

impl Sample {
    pub fn new(doc: TokenizedDoc, label: usize, image: Tensor<f32>) -> Result<Self> {
        ensure!(
            image.rank() == 3 && image.shape()[0] == IMAGE_CHANNELS,
            shape_err!("target image must be [3, H, W], got {:?}", image.shape())
        );
        ensure!(
            image.data().iter().all(|v| (0.0..=1.0).contains(v)),
            Error::Contract("target image values must lie in [0, 1]".into())
        );
        Ok(Self { doc, label, image })
    }
}

/// Builds the vocabulary from the text column of `manifest`.
pub fn build_vocabulary(manifest: &Manifest, min_count: usize) -> Result<Vocabulary> {
    let corpus: Vec<Vec<String>> = manifest.rows().iter().map(|r| tokenize(&r.text)).collect();
    Vocabulary::build(&corpus, min_count)
}

/// Encodes every manifest row and loads its image at `image_size`.
pub fn load_samples(manifest: &Manifest, vocab: &Vocabulary, seq_len: usize, image_size: usize) -> Result<Vec<Sample>> {
    load_samples_with_classes(manifest, manifest.classes(), vocab, seq_len, image_size)
}

/// Like [`load_samples`], with labels indexed into `classes` (for example
/// the class list stored in a checkpoint). Unknown labels are an error.
pub fn load_samples_with_classes(
    manifest: &Manifest,
    classes: &[String],
    vocab: &Vocabulary,
    seq_len: usize,
    image_size: usize,
) -> Result<Vec<Sample>> {
    manifest
        .rows()
        .iter()
        .map(|row| {
            let label = classes
                .iter()
                .position(|c| *c == row.label)
                .ok_or_else(|| Error::Contract(format!("label {:?} is not a known class", row.label)))?;
            let doc = encode(&tokenize(&row.text), vocab, seq_len)?;
            let image = load_image(&row.image_path, (image_size, image_size))?;
            Sample::new(doc, label, image)
        })
        .collect()
}

/// Deterministically carves `round(fraction * n)` samples (at least one)
/// out of `samples` as a validation set. Both parts keep their original
/// relative order.
pub fn split_validation<S: Clone>(samples: &[S], fraction: f64, seed: u64) -> Result<(Vec<S>, Vec<S>)> {
    ensure!(
        fraction > 0.0 && fraction < 1.0,
        Error::Config(format!("validation fraction {fraction} outside (0, 1)"))
    );
    let n = samples.len();
    let n_val = ((fraction * n as f64).round() as usize).max(1);
    ensure!(
        n >= n_val + 2,
        Error::Config(format!("{n} samples are too few to carve out a validation set"))
    );
    let mut order: Vec<usize> = (0..n).collect();
    Rng::seed(seed).shuffle(&mut order);
    let mut is_val = vec![false; n];
    for &i in &order[..n_val] {
        is_val[i] = true;
    }
    let mut train = Vec::with_capacity(n - n_val);
    let mut val = Vec::with_capacity(n_val);
    for (s, v) in samples.iter().zip(is_val) {
        if v {
            val.push(s.clone());
        } else {
            train.push(s.clone());
        }
    }
    Ok((train, val))
}
