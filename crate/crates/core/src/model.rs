//! The joint network: a text CNN encoder whose pooled features are
//! up-sampled into an image layer `F`, followed by a convolutional
//! classifier that reads `F`.
//!
//! ```text
//! ids -> embed -> {conv_text(m) -> relu -> max_over_time} for m in heights
//!     -> concat -> dense -> relu -> reshape [c0, s0, s0]
//!     -> (upsample -> conv 5x5 -> batch norm -> relu) x (n - 1)
//!     -> upsample -> conv 5x5 -> sigmoid                      = F
//! F   -> (conv 5x5 stride 2 -> relu) x 4 -> flatten
//!     -> (dense -> relu) for each hidden size -> dropout -> dense = logits
//! ```

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{ensure, Error, Result};
use crate::loss::softmax;
use crate::nn::{
    BatchNormLayer, BatchStats, BoundParams, Conv2dLayer, ConvTextFilter, DenseLayer, Mode, ParamId, ParamStore,
};
use crate::tensor::{random_init, Init, Rng, Scalar, Tensor};
use crate::text::{encode, tokenize, TokenizedDoc, Vocabulary, PAD};

/// Image channels of the generated layer.
pub const IMAGE_CHANNELS: usize = 3;

/// Half-width of the uniform embedding initialization.
const EMBED_INIT_RANGE: f64 = 0.25;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub num_classes: usize,
    pub embed_dim: usize,
    pub seq_len: usize,
    pub filter_heights: Vec<usize>,
    pub filters_per_height: usize,
    /// Channels at each generator resolution; the last entry is the image.
    pub generator_channels: Vec<usize>,
    /// Square side at each generator resolution; the last entry is the
    /// image size.
    pub generator_sizes: Vec<usize>,
    pub classifier_channels: Vec<usize>,
    pub fc_sizes: Vec<usize>,
    pub kernel_size: usize,
    pub dropout_p: f64,
    pub max_norm: f64,
    pub bn_momentum: f64,
    pub bn_eps: f64,
    /// Divisor that was applied to every width of the full-size network.
    pub scale_factor: usize,
}

impl ModelConfig {
    /// The full-size network producing 3x100x100 images.
    pub fn full(vocab_size: usize, num_classes: usize) -> Self {
        Self {
            vocab_size,
            num_classes,
            embed_dim: 128,
            seq_len: 64,
            filter_heights: vec![3, 4, 5],
            filters_per_height: 128,
            generator_channels: vec![512, 256, 128, 64, IMAGE_CHANNELS],
            generator_sizes: vec![7, 13, 25, 50, 100],
            classifier_channels: vec![64, 32, 16, 8],
            fc_sizes: vec![1024, 512],
            kernel_size: 5,
            dropout_p: 0.5,
            max_norm: 3.0,
            bn_momentum: 0.9,
            bn_eps: 1e-5,
            scale_factor: 1,
        }
    }

    /// Divides the embedding, filter counts, generator channels (except the
    /// image) and hidden sizes by `factor`, keeping the spatial ladder.
    ///
    /// Classifier conv channels are left alone: they are narrow already, and
    /// dividing the last one (8) leaves a single ReLU map that is mostly
    /// dead at init and starves the classifier of gradient.
    pub fn scaled(mut self, factor: usize) -> Self {
        let f = factor.max(1);
        let div = |v: usize| (v / f).max(1);
        self.embed_dim = div(self.embed_dim);
        self.filters_per_height = div(self.filters_per_height);
        let last = self.generator_channels.len().saturating_sub(1);
        for (i, c) in self.generator_channels.iter_mut().enumerate() {
            if i != last {
                *c = div(*c);
            }
        }
        for c in &mut self.fc_sizes {
            *c = div(*c);
        }
        self.scale_factor *= f;
        self
    }

    /// Desk-scale preset: widths divided by 16, a 2..32 image ladder and
    /// eight-token documents.
    pub fn tiny(vocab_size: usize, num_classes: usize) -> Self {
        let mut cfg = Self::full(vocab_size, num_classes).scaled(16);
        cfg.generator_sizes = vec![2, 4, 8, 16, 32];
        cfg.seq_len = 8;
        cfg
    }

    pub fn image_size(&self) -> usize {
        *self.generator_sizes.last().expect("validated ladder")
    }

    pub fn image_shape(&self) -> [usize; 3] {
        let s = self.image_size();
        [IMAGE_CHANNELS, s, s]
    }

    pub fn text_features(&self) -> usize {
        self.filter_heights.len() * self.filters_per_height
    }

    /// Spatial sides of the classifier feature maps, one per conv layer.
    pub fn classifier_sizes(&self) -> Vec<usize> {
        let pad = self.kernel_size / 2;
        let mut size = self.image_size();
        self.classifier_channels
            .iter()
            .map(|_| {
                size = (size + 2 * pad - self.kernel_size) / 2 + 1;
                size
            })
            .collect()
    }

    pub fn flatten_size(&self) -> usize {
        let side = *self.classifier_sizes().last().expect("validated ladder");
        self.classifier_channels.last().expect("validated ladder") * side * side
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.vocab_size < 3 {
            return bad(format!("vocabulary of {} ids leaves no room for tokens", self.vocab_size));
        }
        if self.num_classes < 1 || self.embed_dim < 1 || self.filters_per_height < 1 {
            return bad("class count, embedding size and filter count must be positive".into());
        }
        if self.filter_heights.is_empty() || self.filter_heights.contains(&0) {
            return bad("filter heights must be non-empty and positive".into());
        }
        let tallest = *self.filter_heights.iter().max().unwrap();
        if self.seq_len < tallest.max(crate::text::MIN_SEQ_LEN) {
            return bad(format!("sequence length {} is shorter than the filters", self.seq_len));
        }
        if self.generator_sizes.len() < 2 || self.generator_channels.len() != self.generator_sizes.len() {
            return bad("generator needs matching channel and size ladders of length >= 2".into());
        }
        if self.generator_sizes.windows(2).any(|w| w[0] >= w[1]) || self.generator_sizes[0] == 0 {
            return bad(format!("generator sizes {:?} must be strictly increasing", self.generator_sizes));
        }
        if *self.generator_channels.last().unwrap() != IMAGE_CHANNELS || self.generator_channels.contains(&0) {
            return bad(format!("generator must end in {IMAGE_CHANNELS} channels"));
        }
        if self.classifier_channels.len() != 4 || self.classifier_channels.contains(&0) {
            return bad("classifier needs exactly four positive channel counts".into());
        }
        if self.fc_sizes.contains(&0) {
            return bad("hidden layer sizes must be positive".into());
        }
        if self.kernel_size % 2 == 0 {
            return bad(format!("kernel size {} must be odd", self.kernel_size));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return bad(format!("dropout rate {} outside [0, 1)", self.dropout_p));
        }
        if self.max_norm <= 0.0 || self.bn_eps <= 0.0 || !(0.0..1.0).contains(&self.bn_momentum) {
            return bad("max-norm bound, batch norm epsilon and momentum are out of range".into());
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
struct GeneratorBlock {
    size: usize,
    conv: Conv2dLayer,
    /// Absent on the final block, which ends in a sigmoid instead.
    norm: Option<BatchNormLayer>,
}

/// Parameters and layer wiring of the joint network.
#[derive(Clone, Debug)]
pub struct Model<T: Scalar = f32> {
    cfg: ModelConfig,
    params: ParamStore<T>,
    buffers: ParamStore<T>,
    embedding: ParamId,
    text_filters: Vec<ConvTextFilter>,
    bridge: DenseLayer,
    generator: Vec<GeneratorBlock>,
    classifier: Vec<Conv2dLayer>,
    hidden: Vec<DenseLayer>,
    output: DenseLayer,
}

/// Tape handles of one batched forward pass.
pub struct BatchForward<T: Scalar> {
    /// Generated images `[B, 3, H, W]`.
    pub image: Var,
    /// Class scores `[B, K]`.
    pub logits: Var,
    /// Batch statistics of every normalization layer (train mode only).
    pub stats: Vec<BatchStats<T>>,
    /// Output of every block in order (`text`, `bridge`, `gen<i>`,
    /// `cls<i>`, `fc<i>`, `logits`), for shape inspection.
    pub stages: Vec<(String, Var)>,
}

/// Output of a single-sample inference pass.
#[derive(Clone, Debug, PartialEq)]
pub struct ForwardResult<T: Scalar> {
    /// Generated image `[3, H, W]`, every value in (0, 1).
    pub image: Tensor<T>,
    /// Class scores `[K]`.
    pub logits: Tensor<T>,
}

impl<T: Scalar> Model<T> {
    pub fn build(cfg: ModelConfig, rng: &mut Rng) -> Result<Self> {
        cfg.validate()?;
        let mut params = ParamStore::new();
        let mut buffers = ParamStore::new();

        let mut table: Tensor<T> = random_init(
            rng,
            &[cfg.vocab_size, cfg.embed_dim],
            Init::Uniform {
                lo: -EMBED_INIT_RANGE,
                hi: EMBED_INIT_RANGE,
            },
        )?;
        table.data_mut()[PAD * cfg.embed_dim..(PAD + 1) * cfg.embed_dim].fill(T::zero());
        let embedding = params.add("embedding", table);

        let text_filters = cfg
            .filter_heights
            .iter()
            .map(|&m| {
                ConvTextFilter::new(
                    &mut params,
                    &format!("text_conv{m}"),
                    m,
                    cfg.filters_per_height,
                    cfg.embed_dim,
                    rng,
                )
            })
            .collect::<Result<Vec<_>>>()?;

        let (c0, s0) = (cfg.generator_channels[0], cfg.generator_sizes[0]);
        let bridge = DenseLayer::new(&mut params, "bridge", cfg.text_features(), c0 * s0 * s0, rng)?;

        let steps = cfg.generator_sizes.len() - 1;
        let mut generator = Vec::with_capacity(steps);
        for i in 0..steps {
            let name = format!("gen{i}");
            let (c_in, c_out) = (cfg.generator_channels[i], cfg.generator_channels[i + 1]);
            let conv = Conv2dLayer::new(&mut params, &format!("{name}.conv"), c_in, c_out, cfg.kernel_size, 1, rng)?;
            let norm = if i + 1 < steps {
                Some(BatchNormLayer::new(
                    &mut params,
                    &mut buffers,
                    &format!("{name}.bn"),
                    c_out,
                    cfg.bn_momentum,
                    cfg.bn_eps,
                )?)
            } else {
                None
            };
            generator.push(GeneratorBlock {
                size: cfg.generator_sizes[i + 1],
                conv,
                norm,
            });
        }

        let mut classifier = Vec::with_capacity(cfg.classifier_channels.len());
        let mut c_in = IMAGE_CHANNELS;
        for (i, &c_out) in cfg.classifier_channels.iter().enumerate() {
            classifier.push(Conv2dLayer::new(
                &mut params,
                &format!("cls{i}.conv"),
                c_in,
                c_out,
                cfg.kernel_size,
                2,
                rng,
            )?);
            c_in = c_out;
        }

        let mut hidden = Vec::with_capacity(cfg.fc_sizes.len());
        let mut n_in = cfg.flatten_size();
        for (i, &n_out) in cfg.fc_sizes.iter().enumerate() {
            hidden.push(DenseLayer::new(&mut params, &format!("fc{i}"), n_in, n_out, rng)?);
            n_in = n_out;
        }
        let output = DenseLayer::new(&mut params, "output", n_in, cfg.num_classes, rng)?;

        Ok(Self {
            cfg,
            params,
            buffers,
            embedding,
            text_filters,
            bridge,
            generator,
            classifier,
            hidden,
            output,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    pub fn buffers(&self) -> &ParamStore<T> {
        &self.buffers
    }

    pub fn buffers_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.buffers
    }

    pub fn num_parameters(&self) -> usize {
        self.params.num_scalars()
    }

    pub fn embedding_id(&self) -> ParamId {
        self.embedding
    }

    /// Weight of the output layer, the one under the max-norm constraint.
    pub fn output_weight_id(&self) -> ParamId {
        self.output.weight
    }

    /// Converts every tensor to another precision, keeping the wiring.
    pub fn cast<U: Scalar>(&self) -> Model<U> {
        let conv = |s: &ParamStore<T>| {
            let mut out = ParamStore::new();
            for (name, t) in s.iter() {
                out.add(name, t.cast());
            }
            out
        };
        Model {
            cfg: self.cfg.clone(),
            params: conv(&self.params),
            buffers: conv(&self.buffers),
            embedding: self.embedding,
            text_filters: self.text_filters.clone(),
            bridge: self.bridge.clone(),
            generator: self.generator.clone(),
            classifier: self.classifier.clone(),
            hidden: self.hidden.clone(),
            output: self.output.clone(),
        }
    }

    /// Re-imposes the parameter constraints after an optimizer step: the
    /// max-norm bound on output weight rows and the all-zero PAD embedding.
    pub fn apply_constraints(&mut self) -> Result<()> {
        crate::nn::max_norm_constrain(self.params.get_mut(self.output.weight), self.cfg.max_norm)?;
        let d = self.cfg.embed_dim;
        self.params.get_mut(self.embedding).data_mut()[PAD * d..(PAD + 1) * d].fill(T::zero());
        Ok(())
    }

    /// Folds the statistics of a train-mode pass into the running averages.
    pub fn update_running_stats(&mut self, stats: &[BatchStats<T>]) {
        let norms = self.generator.iter().filter_map(|b| b.norm.as_ref());
        for (norm, s) in norms.zip(stats) {
            norm.update_running(&mut self.buffers, s);
        }
    }

    /// Records a batched forward pass with every parameter bound on `tape`.
    pub fn forward_batch(
        &self,
        tape: &mut Tape<T>,
        docs: &[&TokenizedDoc],
        mode: Mode,
        rng: Option<&mut Rng>,
    ) -> Result<(BatchForward<T>, BoundParams)> {
        let params = self.params.bind(tape, mode == Mode::Train);
        let out = self.forward_bound(tape, &params, docs, mode, rng)?;
        Ok((out, params))
    }

    /// Like [`Model::forward_batch`] with caller-bound parameters, so
    /// individual tensors can be substituted (as gradient checks do).
    pub fn forward_bound(
        &self,
        tape: &mut Tape<T>,
        p: &BoundParams,
        docs: &[&TokenizedDoc],
        mode: Mode,
        rng: Option<&mut Rng>,
    ) -> Result<BatchForward<T>> {
        let cfg = &self.cfg;
        let batch = docs.len();
        ensure!(batch > 0, Error::Contract("forward pass over an empty batch".into()));
        let mut ids = Vec::with_capacity(batch * cfg.seq_len);
        for doc in docs {
            ensure!(
                doc.len() == cfg.seq_len,
                Error::Contract(format!("document has {} ids, model expects {}", doc.len(), cfg.seq_len))
            );
            ids.extend_from_slice(&doc.ids);
        }

        let sentence = tape.embed(p.var(self.embedding), &ids, batch)?;
        let mut pooled = Vec::with_capacity(self.text_filters.len());
        for filter in &self.text_filters {
            let c = filter.forward(tape, p, sentence)?;
            let c = tape.relu(c);
            pooled.push(tape.max_over_time(c)?);
        }
        let features = tape.concat(&pooled)?;
        let mut stages = vec![("text".to_string(), features)];

        let h = self.bridge.forward(tape, p, features)?;
        let h = tape.relu(h);
        let (c0, s0) = (cfg.generator_channels[0], cfg.generator_sizes[0]);
        let mut h = tape.reshape(h, &[batch, c0, s0, s0])?;
        stages.push(("bridge".into(), h));

        let mut stats = Vec::new();
        for (i, block) in self.generator.iter().enumerate() {
            let up = tape.upsample(h, (block.size, block.size))?;
            let conv = block.conv.forward(tape, p, up)?;
            h = match &block.norm {
                Some(norm) => {
                    let (y, s) = norm.forward(tape, p, &self.buffers, conv, mode)?;
                    stats.extend(s);
                    tape.relu(y)
                }
                None => tape.sigmoid(conv),
            };
            stages.push((format!("gen{i}"), h));
        }
        let image = h;

        let mut x = image;
        for (i, conv) in self.classifier.iter().enumerate() {
            let y = conv.forward(tape, p, x)?;
            x = tape.relu(y);
            stages.push((format!("cls{i}"), x));
        }
        let mut x = tape.reshape(x, &[batch, cfg.flatten_size()])?;
        for (i, layer) in self.hidden.iter().enumerate() {
            let y = layer.forward(tape, p, x)?;
            x = tape.relu(y);
            stages.push((format!("fc{i}"), x));
        }
        if mode == Mode::Train && cfg.dropout_p > 0.0 {
            let rng = rng.ok_or_else(|| Error::Contract("train-mode dropout needs a random stream".into()))?;
            x = tape.dropout(x, cfg.dropout_p, rng)?;
        }
        let logits = self.output.forward(tape, p, x)?;
        stages.push(("logits".into(), logits));
        Ok(BatchForward {
            image,
            logits,
            stats,
            stages,
        })
    }

    /// Infer-mode pass over a batch; returns `(images [B,3,H,W], logits [B,K])`.
    pub fn infer_batch(&self, docs: &[&TokenizedDoc]) -> Result<(Tensor<T>, Tensor<T>)> {
        let mut tape = Tape::new();
        let (out, _) = self.forward_batch(&mut tape, docs, Mode::Infer, None)?;
        let image = tape.value(out.image).clone();
        let logits = tape.value(out.logits).clone();
        image.ensure_finite("generated image")?;
        logits.ensure_finite("logits")?;
        Ok((image, logits))
    }

    /// Single-sample pass. Train mode is rejected because batch
    /// normalization needs at least two samples.
    pub fn forward(&self, doc: &TokenizedDoc, mode: Mode) -> Result<ForwardResult<T>> {
        ensure!(
            mode == Mode::Infer,
            Error::Contract("single-sample forward runs in infer mode; train with batches".into())
        );
        let (image, logits) = self.infer_batch(&[doc])?;
        Ok(ForwardResult {
            image: image.reshape(&self.cfg.image_shape())?,
            logits: logits.reshape(&[self.cfg.num_classes])?,
        })
    }

    fn encode_text(&self, text: &str, vocab: &Vocabulary) -> Result<TokenizedDoc> {
        ensure!(
            vocab.len() == self.cfg.vocab_size,
            Error::Config(format!(
                "vocabulary has {} ids but the model was built for {}",
                vocab.len(),
                self.cfg.vocab_size
            ))
        );
        encode(&tokenize(text), vocab, self.cfg.seq_len)
    }

    /// The image layer generated for `text`.
    pub fn generate(&self, text: &str, vocab: &Vocabulary) -> Result<Tensor<T>> {
        let doc = self.encode_text(text, vocab)?;
        Ok(self.forward(&doc, Mode::Infer)?.image)
    }

    /// Predicted class and the full probability vector for `text`.
    pub fn classify(&self, text: &str, vocab: &Vocabulary) -> Result<(usize, Tensor<T>)> {
        let doc = self.encode_text(text, vocab)?;
        let probs = softmax(&self.forward(&doc, Mode::Infer)?.logits);
        Ok((probs.argmax(), probs))
    }
}
