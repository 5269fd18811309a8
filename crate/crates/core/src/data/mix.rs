use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixSpec {
    pub doc_a: Vec<String>,
    pub doc_b: Vec<String>,
    /// Share of `doc_a`; `1 - alpha` is the share of `doc_b`.
    pub alpha: f64,
    /// Unused by the prefix rule.
    pub seed: u64,
}

// Keeps `0.5 * 4` style products from rounding up past an exact integer.
const CEIL_SLACK: f64 = 1e-9;

fn prefix_len(share: f64, len: usize) -> usize {
    ((share * len as f64 - CEIL_SLACK).ceil().max(0.0) as usize).min(len)
}

/// The first `ceil(alpha * |a|)` tokens of `a` followed by the first
/// `ceil((1 - alpha) * |b|)` tokens of `b`.
pub fn mix_tokens(spec: &MixSpec) -> Result<Vec<String>> {
    ensure!(
        !spec.doc_a.is_empty() && !spec.doc_b.is_empty(),
        Error::Contract("both documents to mix must be non-empty".into())
    );
    ensure!(
        (0.0..=1.0).contains(&spec.alpha),
        Error::Config(format!("mixing alpha {} outside [0, 1]", spec.alpha))
    );
    let na = prefix_len(spec.alpha, spec.doc_a.len());
    let nb = prefix_len(1.0 - spec.alpha, spec.doc_b.len());
    Ok(spec.doc_a[..na].iter().chain(&spec.doc_b[..nb]).cloned().collect())
}
