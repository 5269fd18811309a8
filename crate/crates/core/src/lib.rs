//! A convolutional network that reads a product description, renders it
//! into a small RGB image layer, and classifies that image.
//!
//! The crate is organized bottom-up: [`tensor`] holds the dense array type,
//! [`autodiff`] records operations for reverse-mode gradients, [`nn`] and
//! [`loss`] provide layers and objectives on top of the tape, [`model`]
//! wires the full network, [`train`] runs optimization and checkpointing,
//! and [`text`] / [`data`] handle the inputs.

pub mod autodiff;
pub mod data;
pub mod error;
pub mod loss;
pub mod model;
pub mod nn;
pub mod tensor;
pub mod text;
pub mod train;

pub use error::{Error, ErrorKind, Result};
pub use loss::{LossBreakdown, LossConfig, PixelLoss};
pub use model::{ForwardResult, Model, ModelConfig};
pub use nn::Mode;
pub use tensor::{DType, Init, Rng, RngState, Scalar, Tensor};
pub use text::{TokenizedDoc, Vocabulary};
pub use train::{Checkpoint, EpochMetrics, TrainConfig};
pub use data::Sample;
