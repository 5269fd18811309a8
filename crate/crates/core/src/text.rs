//! Tokenization, vocabulary, fixed-length id encoding, and embedding lookup.

use std::collections::HashMap;
use std::path::Path;

use crate::autodiff::Tape;
use crate::error::{ensure, Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Padding id; its embedding row is kept at zero.
pub const PAD: usize = 0;
/// Id of every token missing from the vocabulary.
pub const UNK: usize = 1;
/// Shortest sequence length accepted by [`encode`]: the tallest text
/// filter must fit inside one document.
pub const MIN_SEQ_LEN: usize = 5;

const UNK_TEXT: &str = "<unk>";

/// Lowercases, turns every non-alphanumeric character into a separator,
/// and splits. Digits stay inside tokens (`3x20` is one token).
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_owned)
        .collect()
}

/// Token to id map with `PAD = 0` and `UNK = 1` reserved; corpus tokens
/// take ids `2..` in order of descending frequency, ties broken
/// lexicographically.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    pub fn build<S: AsRef<str>>(corpus: &[Vec<S>], min_count: usize) -> Result<Self> {
        ensure!(!corpus.is_empty(), Error::Config("cannot build a vocabulary from an empty corpus".into()));
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for doc in corpus {
            for tok in doc {
                *counts.entry(tok.as_ref()).or_default() += 1;
            }
        }
        let mut kept: Vec<(&str, usize)> = counts.into_iter().filter(|&(_, c)| c >= min_count.max(1)).collect();
        ensure!(!kept.is_empty(), Error::EmptyVocabulary);
        kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        Self::from_tokens(kept.into_iter().map(|(t, _)| t.to_owned()).collect())
    }

    /// Corpus tokens in id order, starting at id 2.
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        ensure!(!tokens.is_empty(), Error::EmptyVocabulary);
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            ensure!(
                !t.is_empty() && !t.chars().any(char::is_whitespace),
                Error::Contract(format!("invalid vocabulary token {t:?}"))
            );
            ensure!(
                index.insert(t.clone(), i + 2).is_none(),
                Error::Contract(format!("duplicate vocabulary token {t:?}"))
            );
        }
        Ok(Self { tokens, index })
    }

    /// Number of ids including PAD and UNK.
    pub fn len(&self) -> usize {
        self.tokens.len() + 2
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        match id {
            PAD => None,
            UNK => Some(UNK_TEXT),
            _ => self.tokens.get(id - 2).map(String::as_str),
        }
    }

    /// One token per line; line `n` (0-based) holds id `n + 2`.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for t in &self.tokens {
            s.push_str(t);
            s.push('\n');
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let body = text.strip_suffix('\n').unwrap_or(text);
        if body.is_empty() {
            return Err(Error::EmptyVocabulary);
        }
        Self::from_tokens(body.split('\n').map(str::to_owned).collect())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text).map_err(|e| Error::Parse {
            path: path.to_owned(),
            line: 0,
            message: e.to_string(),
        })
    }
}

/// Fixed-length id sequence.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenizedDoc {
    pub ids: Vec<usize>,
    /// Token count before padding or truncation.
    pub original_len: usize,
}

impl TokenizedDoc {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// Maps tokens to ids, right-pads with PAD to `len`, and keeps only the
/// first `len` tokens of longer documents.
pub fn encode<S: AsRef<str>>(tokens: &[S], vocab: &Vocabulary, len: usize) -> Result<TokenizedDoc> {
    ensure!(
        len >= MIN_SEQ_LEN,
        Error::Config(format!("sequence length {len} is below the minimum of {MIN_SEQ_LEN}"))
    );
    let mut ids: Vec<usize> = tokens.iter().take(len).map(|t| vocab.id(t.as_ref())).collect();
    ids.resize(len, PAD);
    Ok(TokenizedDoc {
        ids,
        original_len: tokens.len(),
    })
}

/// Inverse of [`encode`] up to truncation: PAD is dropped and UNK becomes
/// a placeholder that encodes back to UNK.
pub fn decode(doc: &TokenizedDoc, vocab: &Vocabulary) -> Vec<String> {
    doc.ids.iter().filter_map(|&id| vocab.token(id)).map(str::to_owned).collect()
}

/// Sentence matrix `[L, d]`: row `i` is row `ids[i]` of `table [|V|, d]`.
pub fn embed<T: Scalar>(doc: &TokenizedDoc, table: &Tensor<T>) -> Result<Tensor<T>> {
    let mut tape = Tape::new();
    let w = tape.constant(table.clone());
    let s = tape.embed(w, &doc.ids, 1)?;
    let out = tape.value(s);
    out.clone().reshape(&out.shape()[1..])
}
