use std::path::Path;

use pictext_core::autodiff::Tape;
use pictext_core::data::{mix_tokens, Manifest, MixSpec};
use pictext_core::loss::{combined_loss, pixel_loss_mean, pixel_loss_sum, softmax};
use pictext_core::nn::{activation, max_norm_constrain, max_over_time, upsample_nn, Activation};
use pictext_core::tensor::random_init;
use pictext_core::text::{decode, embed, encode};
use pictext_core::train::{Checkpoint, TrainConfig, TrainState};
use pictext_core::{Init, LossConfig, Model, ModelConfig, PixelLoss, Rng, Tensor, Vocabulary};
use proptest::prelude::*;

fn vec_f64(len: impl Into<prop::collection::SizeRange>, lo: f64, hi: f64) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(lo..hi, len)
}

/// `[r, c]` matrix with entries in [-1, 1].
fn matrix(r: usize, c: usize) -> impl Strategy<Value = Tensor<f32>> {
    prop::collection::vec(-1.0f32..1.0, r * c).prop_map(move |d| Tensor::from_vec(&[r, c], d).unwrap())
}

fn word() -> impl Strategy<Value = String> {
    "[a-z]{1,6}"
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn construction_keeps_row_major_data(shape in prop::collection::vec(1usize..5, 1..4), seed in any::<u64>()) {
        let n: usize = shape.iter().product();
        let mut rng = Rng::seed(seed);
        let data: Vec<f64> = (0..n).map(|_| rng.uniform()).collect();
        let t = Tensor::from_vec(&shape, data.clone()).unwrap();
        prop_assert_eq!(t.data(), &data[..]);
        prop_assert_eq!(t.shape(), &shape[..]);
    }

    #[test]
    fn matmul_is_associative((a, b, c) in (1usize..6, 1usize..6, 1usize..6, 1usize..6)
        .prop_flat_map(|(m, k, n, p)| (matrix(m, k), matrix(k, n), matrix(n, p))))
    {
        let left = a.matmul(&b).unwrap().matmul(&c).unwrap();
        let right = a.matmul(&b.matmul(&c).unwrap()).unwrap();
        let scale = left.data().iter().fold(1.0f32, |m, v| m.max(v.abs()));
        for (x, y) in left.data().iter().zip(right.data()) {
            prop_assert!((x - y).abs() <= 1e-4 * scale, "{} vs {}", x, y);
        }
    }

    #[test]
    fn sum_is_the_sequential_loop(data in vec_f64(1..200, -1e3, 1e3)) {
        let mut acc = 0.0f64;
        for v in &data {
            acc += v;
        }
        let t = Tensor::from_vec(&[data.len()], data).unwrap();
        prop_assert_eq!(t.sum().to_bits(), acc.to_bits());
    }

    #[test]
    fn seeded_init_is_reproducible(seed in any::<u64>(), n in 1usize..64) {
        let a: Tensor<f32> = random_init(&mut Rng::seed(seed), &[n], Init::ScaledNormal { fan_in: n }).unwrap();
        let b: Tensor<f32> = random_init(&mut Rng::seed(seed), &[n], Init::ScaledNormal { fan_in: n }).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn repeated_backward_does_not_accumulate(data in vec_f64(1..16, -2.0, 2.0)) {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::from_vec(&[data.len()], data).unwrap(), true);
        let y = tape.mul(x, x).unwrap();
        let loss = tape.sum(y);
        let first = tape.backward(loss).unwrap().get(x).unwrap().clone();
        let second = tape.backward(loss).unwrap().get(x).unwrap().clone();
        prop_assert_eq!(first, second);
    }

    #[test]
    fn reuse_doubles_gradient(data in vec_f64(1..16, -2.0, 2.0)) {
        let t = Tensor::from_vec(&[data.len()], data).unwrap();
        let mut tape = Tape::new();
        let x = tape.leaf(t.clone(), true);
        let once = tape.sum(x);
        let g1 = tape.backward(once).unwrap().get(x).unwrap().clone();
        let mut tape = Tape::new();
        let x = tape.leaf(t, true);
        let twice = tape.add(x, x).unwrap();
        let twice = tape.sum(twice);
        let g2 = tape.backward(twice).unwrap().get(x).unwrap().clone();
        for (a, b) in g1.data().iter().zip(g2.data()) {
            prop_assert_eq!(2.0 * a, *b);
        }
    }

    #[test]
    fn encode_decode_encode_is_stable(
        words in prop::collection::vec(word(), 1..12),
        known in prop::collection::vec(word(), 1..8),
        len in 5usize..12,
    ) {
        let mut vocab_words = known.clone();
        vocab_words.sort();
        vocab_words.dedup();
        let vocab = Vocabulary::from_tokens(vocab_words).unwrap();
        let doc: Vec<String> = words.into_iter().take(len).collect();
        let once = encode(&doc, &vocab, len).unwrap();
        let again = encode(&decode(&once, &vocab), &vocab, len).unwrap();
        prop_assert_eq!(once.ids, again.ids);
    }

    #[test]
    fn embedding_shape_ignores_token_count(n in 0usize..30, len in 5usize..16, d in 1usize..6) {
        let vocab = Vocabulary::from_tokens(vec!["a".into(), "b".into()]).unwrap();
        let toks = vec!["a"; n];
        let doc = encode(&toks, &vocab, len).unwrap();
        let table: Tensor<f64> = Tensor::full(&[vocab.len(), d], 0.5).unwrap();
        let s = embed(&doc, &table).unwrap();
        prop_assert_eq!(s.shape(), &[len, d][..]);
    }

    #[test]
    fn vocabulary_text_round_trip(words in prop::collection::btree_set(word(), 1..20)) {
        let vocab = Vocabulary::from_tokens(words.into_iter().collect()).unwrap();
        let back = Vocabulary::from_text(&vocab.to_text()).unwrap();
        prop_assert_eq!(back.tokens(), vocab.tokens());
    }

    #[test]
    fn activation_ranges(data in vec_f64(1..64, -60.0, 60.0)) {
        let x = Tensor::from_vec(&[data.len()], data).unwrap();
        prop_assert!(activation(Activation::Sigmoid, &x).data().iter().all(|&v| v > 0.0 && v < 1.0));
        prop_assert!(activation(Activation::Relu, &x).data().iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn max_over_time_bounds_its_rows(filters in 1usize..6, steps in 1usize..8, seed in any::<u64>()) {
        let mut rng = Rng::seed(seed);
        let c: Tensor<f64> = random_init(&mut rng, &[filters, steps], Init::Uniform { lo: -3.0, hi: 3.0 }).unwrap();
        let m = max_over_time(&c).unwrap();
        prop_assert_eq!(m.shape(), &[filters][..]);
        for (f, row) in c.data().chunks(steps).enumerate() {
            prop_assert!(row.iter().all(|&v| m.data()[f] >= v));
            prop_assert!(row.contains(&m.data()[f]));
        }
    }

    #[test]
    fn integer_upsampling_repeats_each_value(
        ch in 1usize..3, h in 1usize..5, w in 1usize..5, fy in 1usize..4, fx in 1usize..4, seed in any::<u64>(),
    ) {
        let mut rng = Rng::seed(seed);
        let x: Tensor<f64> = random_init(&mut rng, &[ch, h, w], Init::Uniform { lo: 0.0, hi: 1.0 }).unwrap();
        let y = upsample_nn(&x, (h * fy, w * fx)).unwrap();
        let sorted = |v: &[f64]| {
            let mut v = v.to_vec();
            v.sort_by(f64::total_cmp);
            v
        };
        let expected: Vec<f64> = sorted(x.data()).into_iter().flat_map(|v| std::iter::repeat_n(v, fy * fx)).collect();
        prop_assert_eq!(sorted(y.data()), expected);
    }

    #[test]
    fn softmax_sums_to_one_and_ignores_shifts(logits in vec_f64(1..20, -50.0, 50.0), shift in -100.0f64..100.0) {
        let x = Tensor::from_vec(&[logits.len()], logits.clone()).unwrap();
        let p = softmax(&x);
        prop_assert!((p.sum() - 1.0).abs() < 1e-6);
        let shifted = softmax(&x.map(|v| v + shift));
        for (a, b) in p.data().iter().zip(shifted.data()) {
            prop_assert!((a - b).abs() < 1e-6);
        }
        prop_assert_eq!(p.argmax(), x.argmax());
    }

    #[test]
    fn pixel_losses_agree((f, i) in (1usize..6, 1usize..6)
        .prop_flat_map(|(h, w)| {
            let n = 3 * h * w;
            (vec_f64(n, 0.0, 1.0), vec_f64(n, 0.0, 1.0)).prop_map(move |(f, i)| {
                (Tensor::from_vec(&[3, h, w], f).unwrap(), Tensor::from_vec(&[3, h, w], i).unwrap())
            })
        }))
    {
        let sum = pixel_loss_sum(&f, &i).unwrap();
        let mean = pixel_loss_mean(&f, &i).unwrap();
        let n = f.len() as f64;
        prop_assert!(sum >= 0.0);
        prop_assert!((sum - n * mean).abs() <= 1e-6 * sum.abs().max(1e-12));
        prop_assert_eq!(pixel_loss_sum(&f, &f).unwrap(), 0.0);
        if f != i {
            prop_assert!(sum > 0.0);
        }
    }

    #[test]
    fn zero_lambda_total_is_l0(seed in any::<u64>(), mean in any::<bool>()) {
        let mut rng = Rng::seed(seed);
        let logits: Tensor<f64> = random_init(&mut rng, &[2, 3], Init::Uniform { lo: -2.0, hi: 2.0 }).unwrap();
        let image: Tensor<f64> = random_init(&mut rng, &[2, 3, 2, 2], Init::Uniform { lo: 0.0, hi: 1.0 }).unwrap();
        let target: Tensor<f64> = random_init(&mut rng, &[2, 3, 2, 2], Init::Uniform { lo: 0.0, hi: 1.0 }).unwrap();
        let variant = if mean { PixelLoss::Mean } else { PixelLoss::Sum };
        let mut tape = Tape::new();
        let (l, im) = (tape.leaf(logits, true), tape.leaf(image, true));
        let (_, b) = combined_loss(&mut tape, l, &[0, 2], im, &target, &LossConfig::new(variant, 0.0).unwrap()).unwrap();
        prop_assert_eq!(b.total, b.l0);
        prop_assert!(b.pixel > 0.0);
    }

    #[test]
    fn max_norm_bounds_rows_and_is_idempotent(seed in any::<u64>(), bound in 0.1f64..5.0) {
        let mut rng = Rng::seed(seed);
        let mut w: Tensor<f64> = random_init(&mut rng, &[6, 4], Init::Uniform { lo: -4.0, hi: 4.0 }).unwrap();
        max_norm_constrain(&mut w, bound).unwrap();
        let once = w.clone();
        max_norm_constrain(&mut w, bound).unwrap();
        for (a, b) in w.data().iter().zip(once.data()) {
            prop_assert!((a - b).abs() <= 1e-12);
        }
        for row in w.data().chunks(4) {
            prop_assert!(row.iter().map(|v| v * v).sum::<f64>().sqrt() <= bound * (1.0 + 1e-12));
        }
    }

    #[test]
    fn mix_length_follows_the_shares(
        a in prop::collection::vec(word(), 1..15),
        b in prop::collection::vec(word(), 1..15),
        alpha in 0.0f64..=1.0,
    ) {
        let spec = MixSpec { doc_a: a.clone(), doc_b: b.clone(), alpha, seed: 0 };
        let mixed = mix_tokens(&spec).unwrap();
        let expected = (alpha * a.len() as f64 - 1e-9).ceil().max(0.0) as usize
            + ((1.0 - alpha) * b.len() as f64 - 1e-9).ceil().max(0.0) as usize;
        prop_assert_eq!(mixed.len(), expected);
    }

    #[test]
    fn manifest_parsing_is_order_stable(labels in prop::collection::vec(0usize..4, 1..20)) {
        let names = ["b", "a", "d", "c"];
        let tsv: String = labels
            .iter()
            .enumerate()
            .map(|(i, &l)| format!("{}\timg{i}.png\ttext {i}\n", names[l]))
            .collect();
        let base = Path::new("/data");
        let m1 = Manifest::parse(&tsv, base, Path::new("m.tsv")).unwrap();
        let m2 = Manifest::parse(&tsv, base, Path::new("m.tsv")).unwrap();
        prop_assert_eq!(m1.rows(), m2.rows());
        prop_assert_eq!(m1.classes(), m2.classes());
        let mut first_seen: Vec<&str> = Vec::new();
        for &l in &labels {
            if !first_seen.contains(&names[l]) {
                first_seen.push(names[l]);
            }
        }
        prop_assert_eq!(m1.classes(), &first_seen.iter().map(|s| s.to_string()).collect::<Vec<_>>()[..]);
        let again = Manifest::from_rows(m1.rows().to_vec());
        prop_assert_eq!(again.rows(), m1.rows());
        prop_assert_eq!(again.classes(), m1.classes());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn checkpoint_bytes_round_trip(seed in any::<u64>(), epochs in 0usize..3) {
        let vocab = Vocabulary::from_tokens(vec!["x".into(), "y".into()]).unwrap();
        let cfg = ModelConfig::tiny(vocab.len(), 2);
        let model = Model::<f32>::build(cfg, &mut Rng::seed(seed)).unwrap();
        let train = TrainConfig { epochs, seed, ..TrainConfig::default() };
        let state = TrainState::new(&model, &train);
        let ck = Checkpoint { model, vocab, classes: vec!["p".into(), "q".into()], training: Some((train, state)) };
        let bytes = ck.to_bytes().unwrap();
        prop_assert_eq!(&bytes[..8], b"PTXTCKPT");
        let back = Checkpoint::<f32>::from_bytes(&bytes).unwrap();
        prop_assert_eq!(back.to_bytes().unwrap(), bytes);
        prop_assert_eq!(back.model.params().tensors(), ck.model.params().tensors());
    }
}

#[test]
fn checkpoint_floats_are_little_endian() {
    let vocab = Vocabulary::from_tokens(vec!["x".into()]).unwrap();
    let mut model = Model::<f32>::build(ModelConfig::tiny(vocab.len(), 2), &mut Rng::seed(0)).unwrap();
    let id = model.output_weight_id();
    model.params_mut().get_mut(id).data_mut()[0] = 1.5;
    let ck = Checkpoint { model, vocab, classes: vec!["p".into(), "q".into()], training: None };
    let bytes = ck.to_bytes().unwrap();
    let le = 1.5f32.to_le_bytes();
    assert!(bytes.windows(4).any(|w| w == le));
    let header_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    assert!(16 + header_len < bytes.len());
}
