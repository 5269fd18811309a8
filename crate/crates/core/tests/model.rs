mod common;

use pictext_core::autodiff::grad_check_coords;
use pictext_core::autodiff::Tape;
use pictext_core::loss::combined_loss;
use pictext_core::nn::Mode;
use pictext_core::text::{encode, tokenize};
use pictext_core::train::train;
use pictext_core::{Model, ModelConfig, Rng, Sample, Tensor, TokenizedDoc, Vocabulary};

use common::{overfit_train_config, solid, text};

fn small_vocab() -> Vocabulary {
    Vocabulary::from_tokens(["red", "steel", "hammer", "blue", "screw", "pack"].map(String::from).to_vec()).unwrap()
}

#[test]
fn full_config_parameter_count() {
    // Hand count for V = 1000, K = 52 (weights + biases, BN gamma/beta).
    let embedding = 1000 * 128;
    let text_convs = 128 * 3 * 128 + 128 + 128 * 4 * 128 + 128 + 128 * 5 * 128 + 128;
    let bridge = 384 * 25088 + 25088;
    let generator = (256 * 512 * 25 + 256 + 2 * 256)
        + (128 * 256 * 25 + 128 + 2 * 128)
        + (64 * 128 * 25 + 64 + 2 * 64)
        + (3 * 64 * 25 + 3);
    let classifier = (64 * 3 * 25 + 64) + (32 * 64 * 25 + 32) + (16 * 32 * 25 + 16) + (8 * 16 * 25 + 8);
    let fc = (392 * 1024 + 1024) + (1024 * 512 + 512) + (512 * 52 + 52);
    let total = embedding + text_convs + bridge + generator + classifier + fc;
    assert_eq!(total, 15_316_847);

    let model = Model::<f32>::build(ModelConfig::full(1000, 52), &mut Rng::seed(0)).unwrap();
    assert_eq!(model.num_parameters(), total);
}

#[test]
fn inference_is_a_pure_function() {
    let vocab = small_vocab();
    let model = Model::<f32>::build(ModelConfig::tiny(vocab.len(), 3), &mut Rng::seed(4)).unwrap();
    let doc = encode(&tokenize("red steel hammer"), &vocab, 8).unwrap();
    let (i1, l1) = model.infer_batch(&[&doc]).unwrap();
    let other = encode(&tokenize("blue screw pack"), &vocab, 8).unwrap();
    model.infer_batch(&[&other, &doc]).unwrap();
    let (i2, l2) = model.infer_batch(&[&doc]).unwrap();
    assert_eq!(i1, i2);
    assert_eq!(l1, l2);
}

/// Every parameter tensor of a tiny f64 model against central differences,
/// in train mode with a frozen dropout mask.
#[test]
fn whole_model_gradient_check() {
    let vocab = small_vocab();
    let mut cfg = ModelConfig::tiny(vocab.len(), 3);
    assert_eq!((cfg.embed_dim, cfg.seq_len, cfg.image_size()), (8, 8, 32));
    cfg.dropout_p = 0.25;
    let mut model = Model::<f64>::build(cfg, &mut Rng::seed(9)).unwrap();
    // Zero biases put all-PAD windows exactly on the ReLU kink; move off it.
    let mut jitter = Rng::seed(10);
    let biases: Vec<_> = model.params().ids().filter(|&id| model.params().name(id).ends_with("bias")).collect();
    for id in biases {
        for v in model.params_mut().get_mut(id).data_mut() {
            *v = 0.2 * jitter.uniform() - 0.1;
        }
    }
    let docs: Vec<TokenizedDoc> = ["red steel hammer", "blue screw pack pack"]
        .iter()
        .map(|t| encode(&tokenize(t), &vocab, 8).unwrap())
        .collect();
    let refs: Vec<&TokenizedDoc> = docs.iter().collect();
    let labels = [0, 2];
    let mut targets = solid([0.2, 0.5, 0.8], 32).cast::<f64>().into_data();
    targets.extend(solid([0.9, 0.1, 0.4], 32).cast::<f64>().into_data());
    let targets = Tensor::from_vec(&[2, 3, 32, 32], targets).unwrap();
    let loss_cfg = pictext_core::LossConfig::default();
    let dropout = Rng::seed(77);

    let mut worst = 0.0f64;
    let mut pick = Rng::seed(5);
    for id in model.params().ids() {
        let x = model.params().get(id).clone();
        let name = model.params().name(id).to_string();
        let coords: Vec<usize> = if name.starts_with("embed") {
            // Rows of tokens that appear in the batch, PAD excluded.
            let d = x.shape()[1];
            vec![2 * d, 2 * d + 3, 5 * d + 1, 7 * d + 7]
        } else {
            (0..4).map(|_| (pick.next_u64() % x.len() as u64) as usize).collect()
        };
        let f = |tape: &mut Tape<f64>, v| {
            let mut p = model.params().bind(tape, false);
            p.replace(id, v);
            let out = model.forward_bound(tape, &p, &refs, Mode::Train, Some(&mut dropout.clone()))?;
            let (vars, _) = combined_loss(tape, out.logits, &labels, out.image, &targets, &loss_cfg)?;
            Ok(vars.total)
        };
        let err = grad_check_coords(f, &x, 1e-6, &coords).unwrap();
        assert!(err < 1e-3, "{name}: relative error {err:.3e}");
        worst = worst.max(err);
    }
    eprintln!("worst relative gradient error {worst:.3e}");
}

#[test]
fn training_loss_settles_monotonically() {
    let words: Vec<String> = (0..4).flat_map(|c| (0..4).map(move |s| text(c, s))).collect();
    let corpus: Vec<Vec<String>> = words.iter().map(|t| tokenize(t)).collect();
    let vocab = Vocabulary::build(&corpus, 1).unwrap();
    let cfg = ModelConfig::tiny(vocab.len(), 4);
    let samples: Vec<Sample> = corpus
        .iter()
        .enumerate()
        .map(|(i, toks)| {
            let (c, s) = (i / 4, i % 4);
            let color = [0.2 + 0.2 * c as f32, 0.2 + 0.2 * s as f32, 0.5];
            Sample::new(encode(toks, &vocab, cfg.seq_len).unwrap(), c, solid(color, 32)).unwrap()
        })
        .collect();
    let epochs = 60;
    let mut model = Model::<f32>::build(cfg, &mut Rng::seed(11)).unwrap();
    let history = train(&mut model, &samples, None, &overfit_train_config(0.8, epochs)).unwrap();
    let losses: Vec<f64> = history.iter().map(|m| m.loss_total).collect();
    for t in (epochs / 10 + 1)..epochs {
        assert!(
            losses[t] <= losses[t - 1] * 1.05,
            "epoch {}: loss {} after {}",
            t + 1,
            losses[t],
            losses[t - 1]
        );
    }
    assert!(losses[epochs - 1] < 0.5 * losses[0], "{losses:?}");
}
