//! Binary checkpoint file:
//!
//! ```text
//! magic "PTXTCKPT" | header length: u64 LE | header: UTF-8 JSON | tensor data
//! ```
//!
//! The header lists every tensor (name, section, shape) in storage order;
//! the data is the concatenation of those tensors as little-endian floats
//! of the recorded dtype.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{AdamState, EpochMetrics, TrainConfig, TrainState};
use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig};
use crate::tensor::{DType, Rng, RngState, Scalar, Tensor};
use crate::text::Vocabulary;

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"PTXTCKPT";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum Section {
    Param,
    Buffer,
    AdamM,
    AdamV,
}

#[derive(Debug, PartialEq, Serialize, Deserialize)]
struct Entry {
    name: String,
    section: Section,
    shape: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct TrainingHeader {
    config: TrainConfig,
    adam_step: u64,
    rng: RngState,
    epoch: usize,
    history: Vec<EpochMetrics>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    version: u32,
    dtype: DType,
    model: ModelConfig,
    vocabulary: Vec<String>,
    classes: Vec<String>,
    tensors: Vec<Entry>,
    training: Option<TrainingHeader>,
}

/// A model with everything needed to use it on raw text, and optionally
/// the state needed to continue training it.
#[derive(Clone, Debug)]
pub struct Checkpoint<T: Scalar = f32> {
    pub model: Model<T>,
    pub vocab: Vocabulary,
    pub classes: Vec<String>,
    pub training: Option<(TrainConfig, TrainState<T>)>,
}

fn entries<T: Scalar>(model: &Model<T>, with_adam: bool) -> Vec<(Section, String, Vec<usize>)> {
    let mut out = Vec::new();
    let mut add = |section, store: &crate::nn::ParamStore<T>| {
        for (name, t) in store.iter() {
            out.push((section, name.to_owned(), t.shape().to_vec()));
        }
    };
    add(Section::Param, model.params());
    add(Section::Buffer, model.buffers());
    if with_adam {
        add(Section::AdamM, model.params());
        add(Section::AdamV, model.params());
    }
    out
}

impl<T: Scalar> Checkpoint<T> {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let training = self.training.as_ref().map(|(cfg, st)| TrainingHeader {
            config: cfg.clone(),
            adam_step: st.adam.step,
            rng: st.rng.state(),
            epoch: st.epoch,
            history: st.history.clone(),
        });
        let header = Header {
            version: CHECKPOINT_VERSION,
            dtype: T::DTYPE,
            model: self.model.config().clone(),
            vocabulary: self.vocab.tokens().to_vec(),
            classes: self.classes.clone(),
            tensors: entries(&self.model, training.is_some())
                .into_iter()
                .map(|(section, name, shape)| Entry { name, section, shape })
                .collect(),
            training,
        };
        let json = serde_json::to_vec(&header).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let mut tensors: Vec<&Tensor<T>> = self.model.params().tensors().iter().collect();
        tensors.extend(self.model.buffers().tensors());
        if let Some((_, st)) = &self.training {
            tensors.extend(&st.adam.m);
            tensors.extend(&st.adam.v);
        }
        let data_len: usize = tensors.iter().map(|t| t.len() * T::BYTES).sum();
        let mut out = Vec::with_capacity(16 + json.len() + data_len);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for t in tensors {
            for &v in t.data() {
                v.write_le(&mut out);
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: String| Error::Checkpoint(m);
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(bad("not a checkpoint file".into()));
        }
        let header_len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes"));
        let header_end = usize::try_from(header_len)
            .ok()
            .and_then(|n| n.checked_add(16))
            .filter(|&end| end <= bytes.len())
            .ok_or_else(|| bad("truncated header".into()))?;
        let header: Header =
            serde_json::from_slice(&bytes[16..header_end]).map_err(|e| bad(format!("corrupt header: {e}")))?;
        if header.version != CHECKPOINT_VERSION {
            return Err(bad(format!(
                "format version {} is not supported (expected {CHECKPOINT_VERSION})",
                header.version
            )));
        }
        if header.dtype != T::DTYPE {
            return Err(bad(format!("stored as {:?}, requested {:?}", header.dtype, T::DTYPE)));
        }
        let vocab = Vocabulary::from_tokens(header.vocabulary)?;
        let mut model = Model::<T>::build(header.model, &mut Rng::seed(0))?;
        if vocab.len() != model.config().vocab_size {
            return Err(bad("vocabulary does not match the embedding table".into()));
        }

        let expected = entries(&model, header.training.is_some());
        if expected.len() != header.tensors.len()
            || expected
                .iter()
                .zip(&header.tensors)
                .any(|((s, n, sh), e)| *s != e.section || *n != e.name || *sh != e.shape)
        {
            return Err(bad("tensor manifest does not match the model configuration".into()));
        }
        let data = &bytes[header_end..];
        let need: usize = expected.iter().map(|(_, _, s)| s.iter().product::<usize>() * T::BYTES).sum();
        if data.len() != need {
            return Err(bad(format!("expected {need} bytes of tensor data, found {}", data.len())));
        }

        let mut chunks = data.chunks_exact(T::BYTES).map(T::read_le);
        let mut fill = |t: &mut Tensor<T>| {
            for v in t.data_mut() {
                *v = chunks.next().expect("length checked");
            }
        };
        model.params_mut().tensors_mut().iter_mut().for_each(&mut fill);
        model.buffers_mut().tensors_mut().iter_mut().for_each(&mut fill);
        let training = match header.training {
            Some(th) => {
                let mut adam = AdamState::new(model.params());
                adam.m.iter_mut().for_each(&mut fill);
                adam.v.iter_mut().for_each(&mut fill);
                adam.step = th.adam_step;
                let rng = Rng::from_state(&th.rng).ok_or_else(|| bad("invalid random generator state".into()))?;
                Some((
                    th.config,
                    TrainState {
                        adam,
                        rng,
                        epoch: th.epoch,
                        history: th.history,
                    },
                ))
            }
            None => None,
        };
        Ok(Self {
            model,
            vocab,
            classes: header.classes,
            training,
        })
    }

    /// Writes through a temporary file so a failed save never leaves a
    /// half-written checkpoint at `path`.
    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        let mut tmp = path.as_os_str().to_owned();
        tmp.push(".tmp");
        let tmp = std::path::PathBuf::from(tmp);
        std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Sample;
    use crate::text::TokenizedDoc;

    fn fixture() -> Checkpoint<f32> {
        let cfg = ModelConfig::tiny(6, 2);
        let mut model = Model::<f32>::build(cfg.clone(), &mut Rng::seed(2)).unwrap();
        let samples: Vec<Sample> = (0..4)
            .map(|i| {
                let doc = TokenizedDoc { ids: vec![2 + i % 4; cfg.seq_len], original_len: 1 };
                Sample::new(doc, i % 2, Tensor::full(&[3, 32, 32], 0.25 * i as f32).unwrap()).unwrap()
            })
            .collect();
        let tc = TrainConfig {
            epochs: 1,
            batch_size: 2,
            ..TrainConfig::default()
        };
        let mut st = TrainState::new(&model, &tc);
        st.run(&mut model, &samples, None, &tc).unwrap();
        Checkpoint {
            model,
            vocab: Vocabulary::from_tokens(vec!["a".into(), "b".into(), "c".into(), "d".into()]).unwrap(),
            classes: vec!["x".into(), "y".into()],
            training: Some((tc, st)),
        }
    }

    #[test]
    fn bytes_round_trip_exactly() {
        let ck = fixture();
        let bytes = ck.to_bytes().unwrap();
        let back = Checkpoint::<f32>::from_bytes(&bytes).unwrap();
        assert_eq!(back.to_bytes().unwrap(), bytes);
        assert_eq!(back.model.params(), ck.model.params());
        assert_eq!(back.training.as_ref().unwrap().1, ck.training.as_ref().unwrap().1);
    }

    #[test]
    fn damage_is_detected() {
        let bytes = fixture().to_bytes().unwrap();
        assert!(Checkpoint::<f32>::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut corrupt = bytes.clone();
        corrupt[20] = b'#';
        assert!(matches!(Checkpoint::<f32>::from_bytes(&corrupt), Err(Error::Checkpoint(_))));
        assert!(Checkpoint::<f32>::from_bytes(b"nope").is_err());
        assert!(Checkpoint::<f64>::from_bytes(&bytes).is_err());
    }

    #[test]
    fn version_mismatch_rejected() {
        let bytes = fixture().to_bytes().unwrap();
        let len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let json = String::from_utf8(bytes[16..16 + len].to_vec()).unwrap();
        let bumped = json.replacen("\"version\":1", "\"version\":9", 1);
        let mut out = bytes[..8].to_vec();
        out.extend_from_slice(&(bumped.len() as u64).to_le_bytes());
        out.extend_from_slice(bumped.as_bytes());
        out.extend_from_slice(&bytes[16 + len..]);
        let err = Checkpoint::<f32>::from_bytes(&out).unwrap_err();
        assert!(err.to_string().contains("version 9"), "{err}");
    }
}
