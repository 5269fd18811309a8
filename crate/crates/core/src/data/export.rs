use std::path::{Path, PathBuf};

use super::image::save_image;
use super::manifest::{Manifest, ManifestRow};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::tensor::Scalar;
use crate::text::{encode, tokenize, TokenizedDoc, Vocabulary};

const EXPORT_BATCH: usize = 16;

/// Outcome of [`export_encodings`].
#[derive(Clone, Debug)]
pub struct ExportReport {
    /// Manifest over the written PNGs with the original labels and texts.
    pub manifest: Manifest,
    pub manifest_path: PathBuf,
}

/// Lowercase ASCII alphanumerics; everything else becomes `-`.
pub fn sanitize_label(label: &str) -> String {
    let s: String = label
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() { c.to_ascii_lowercase() } else { '-' })
        .collect();
    if s.is_empty() {
        "-".into()
    } else {
        s
    }
}

/// Runs every manifest text through `model` and stores the generated
/// image layer as `<index:06>_<label>.png` in `out_dir`, together with
/// `encodings_<tag>.tsv` describing the new image dataset.
///
/// On failure the error reports how many encodings were already written.
pub fn export_encodings<T: Scalar>(
    model: &Model<T>,
    manifest: &Manifest,
    vocab: &Vocabulary,
    out_dir: &Path,
    tag: &str,
) -> Result<ExportReport> {
    let total = manifest.len();
    let mut written = 0;
    let abort = |written: usize, e: Error| Error::Export {
        written,
        total,
        source: Box::new(e),
    };
    std::fs::create_dir_all(out_dir).map_err(|e| abort(0, Error::io(out_dir, e)))?;
    let seq_len = model.config().seq_len;
    let docs = manifest
        .rows()
        .iter()
        .map(|r| encode(&tokenize(&r.text), vocab, seq_len))
        .collect::<Result<Vec<TokenizedDoc>>>()
        .map_err(|e| abort(0, e))?;

    let mut rows = Vec::with_capacity(total);
    for (chunk_idx, chunk) in docs.chunks(EXPORT_BATCH).enumerate() {
        let refs: Vec<&TokenizedDoc> = chunk.iter().collect();
        let (images, _) = model.infer_batch(&refs).map_err(|e| abort(written, e))?;
        let per = images.len() / chunk.len();
        let shape = model.config().image_shape();
        for k in 0..chunk.len() {
            let index = chunk_idx * EXPORT_BATCH + k;
            let src = &manifest.rows()[index];
            let name = format!("{index:06}_{}.png", sanitize_label(&src.label));
            let path = out_dir.join(&name);
            let img = crate::Tensor::from_vec(&shape, images.data()[k * per..(k + 1) * per].to_vec())
                .map_err(|e| abort(written, e))?;
            save_image(&img, &path).map_err(|e| abort(written, e))?;
            written += 1;
            rows.push(ManifestRow {
                label: src.label.clone(),
                image_ref: name,
                image_path: path,
                text: src.text.clone(),
            });
        }
    }
    let manifest = Manifest::from_rows(rows);
    let manifest_path = out_dir.join(format!("encodings_{}.tsv", sanitize_label(tag)));
    manifest.save(&manifest_path).map_err(|e| abort(written, e))?;
    Ok(ExportReport { manifest, manifest_path })
}
