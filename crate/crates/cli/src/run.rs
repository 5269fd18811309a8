use std::path::{Path, PathBuf};

use pictext_core::data::{
    build_vocabulary, export_encodings, load_manifest, load_samples_with_classes, mix_tokens, save_image,
    split_validation, tile_images, Manifest, MixSpec,
};
use pictext_core::text::tokenize;
use pictext_core::train::{
    evaluate_accuracy, lambda_sweep, metrics_csv, Checkpoint, SweepConfig, TrainConfig, TrainState,
};
use pictext_core::{Error, Model, Result, Rng, Sample};
use serde_json::json;

use crate::args::{Command, EvalArgs, ExportArgs, GenerateArgs, MixArgs, SweepArgs, TrainArgs};
use crate::config::{resolve, Resolved};

pub const OUT_ROOT_ENV: &str = "PICTEXT_OUT_DIR";
const DEFAULT_VAL_FRACTION: f64 = 0.1;

pub fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Generate(a) => generate(a),
        Command::Mix(a) => mix(a),
        Command::Sweep(a) => sweep(a),
        Command::Export(a) => export(a),
    }
}

fn out_dir(given: Option<PathBuf>, command: &str) -> Result<PathBuf> {
    let dir = match given {
        Some(d) => d,
        None => match std::env::var_os(OUT_ROOT_ENV) {
            Some(root) => PathBuf::from(root).join(command),
            None => return Err(Error::Config(format!("--out is required when {OUT_ROOT_ENV} is not set"))),
        },
    };
    std::fs::create_dir_all(&dir).map_err(|e| io(&dir, e))?;
    Ok(dir)
}

fn io(path: &Path, e: std::io::Error) -> Error {
    Error::Io {
        path: path.to_owned(),
        source: e,
    }
}

fn write(path: &Path, text: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, text).map_err(|e| io(path, e))
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Config(e.to_string()))?;
    write(path, text + "\n")
}

/// Training and validation manifests; the split never changes class indices.
fn split_manifest(full: &Manifest, val: Option<&Path>, fraction: Option<f64>, seed: u64) -> Result<(Manifest, Option<Manifest>)> {
    if let Some(p) = val {
        return Ok((full.clone(), Some(load_manifest(p)?)));
    }
    match fraction {
        Some(f) => {
            let (t, v) = split_validation(full.rows(), f, seed)?;
            Ok((Manifest::from_rows(t), Some(Manifest::from_rows(v))))
        }
        None => Ok((full.clone(), None)),
    }
}

fn load_set(m: &Manifest, classes: &[String], ck_model: &pictext_core::ModelConfig, vocab: &pictext_core::Vocabulary) -> Result<Vec<Sample>> {
    load_samples_with_classes(m, classes, vocab, ck_model.seq_len, ck_model.image_size())
}

fn progress(quiet: bool, m: &pictext_core::EpochMetrics, total: usize) {
    if !quiet {
        let val = m.val_acc.map(|v| format!(" val_acc={v:.4}")).unwrap_or_default();
        eprintln!(
            "epoch {}/{total} loss={:.5} l0={:.5} pixel={:.5} train_acc={:.4}{val}",
            m.epoch, m.loss_total, m.loss_l0, m.loss_pixel, m.train_acc
        );
    }
}

fn train(a: TrainArgs) -> Result<()> {
    let out = out_dir(a.out, "train")?;
    let full = load_manifest(&a.manifest)?;

    let (mut ck, cfg, resolved) = match &a.resume {
        Some(path) => {
            let ck = Checkpoint::<f32>::load(path)?;
            let (mut cfg, _) = ck
                .training
                .clone()
                .ok_or_else(|| Error::Checkpoint(format!("{} has no training state", path.display())))?;
            if let Some(e) = a.model.epochs {
                cfg.epochs = e;
            }
            let resolved = Resolved {
                model: ck.model.config().clone(),
                train: cfg.clone(),
                min_count: 1,
            };
            (ck, cfg, resolved)
        }
        None => {
            let resolved = resolve(&a.model)?;
            let cfg = resolved.train.clone();
            // Vocabulary from the training split only.
            let (train_m, _) = split_manifest(&full, a.val_manifest.as_deref(), a.val_fraction, cfg.seed)?;
            let vocab = build_vocabulary(&train_m, resolved.min_count)?;
            let model_cfg = resolved.model_for(vocab.len(), full.num_classes());
            let model = Model::<f32>::build(model_cfg, &mut Rng::seed(cfg.seed))?;
            let state = TrainState::new(&model, &cfg);
            let ck = Checkpoint {
                model,
                vocab,
                classes: full.classes().to_vec(),
                training: Some((cfg.clone(), state)),
            };
            (ck, cfg, resolved)
        }
    };

    let (train_m, val_m) = split_manifest(&full, a.val_manifest.as_deref(), a.val_fraction, cfg.seed)?;
    let mcfg = ck.model.config().clone();
    let train_set = load_set(&train_m, &ck.classes, &mcfg, &ck.vocab)?;
    let val_set = val_m.map(|m| load_set(&m, &ck.classes, &mcfg, &ck.vocab)).transpose()?;

    write_json(
        &out.join("config.json"),
        &json!({
            "command": "train",
            "manifest": a.manifest,
            "val_manifest": a.val_manifest,
            "val_fraction": a.val_fraction,
            "resume": a.resume,
            "seed": cfg.seed,
            "min_count": resolved.min_count,
            "model": mcfg,
            "train": cfg,
            "classes": ck.classes,
            "vocab_size": ck.vocab.len(),
            "train_samples": train_set.len(),
            "val_samples": val_set.as_ref().map(Vec::len),
        }),
    )?;
    ck.vocab.save(&out.join("vocab.txt"))?;

    let (_, mut state) = ck.training.take().expect("training state");
    let every = a.checkpoint_every.unwrap_or(0);
    while state.epoch < cfg.epochs {
        let m = state.run_epoch(&mut ck.model, &train_set, val_set.as_deref(), &cfg)?;
        progress(a.quiet, &m, cfg.epochs);
        if every > 0 && state.epoch % every == 0 {
            ck.training = Some((cfg.clone(), state.clone()));
            ck.save(&out.join(format!("epoch_{}.ckpt", state.epoch)))?;
        }
    }
    write(&out.join("metrics.csv"), metrics_csv(&state.history))?;
    ck.training = Some((cfg, state));
    ck.save(&out.join("model.ckpt"))?;
    if !a.quiet {
        eprintln!("wrote {}", out.display());
    }
    Ok(())
}

fn eval(a: EvalArgs) -> Result<()> {
    let ck = Checkpoint::<f32>::load(&a.checkpoint)?;
    let m = load_manifest(&a.manifest)?;
    let set = load_set(&m, &ck.classes, ck.model.config(), &ck.vocab)?;
    let acc = evaluate_accuracy(&ck.model, &set)?;
    println!("accuracy={acc}");
    Ok(())
}

fn generate(a: GenerateArgs) -> Result<()> {
    let ck = Checkpoint::<f32>::load(&a.checkpoint)?;
    let img = ck.model.generate(&a.text, &ck.vocab)?;
    if let Some(parent) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| io(parent, e))?;
    }
    save_image(&img, &a.out)?;
    let (class, probs) = ck.model.classify(&a.text, &ck.vocab)?;
    println!("class={} p={:.4}", ck.classes[class], probs.data()[class]);
    Ok(())
}

fn mix(a: MixArgs) -> Result<()> {
    let out = out_dir(a.out, "mix")?;
    let ck = Checkpoint::<f32>::load(&a.checkpoint)?;
    let (doc_a, doc_b) = (tokenize(&a.text_a), tokenize(&a.text_b));
    let mut images = Vec::with_capacity(a.alphas.len());
    let mut rows = Vec::new();
    for (i, &alpha) in a.alphas.iter().enumerate() {
        let spec = MixSpec {
            doc_a: doc_a.clone(),
            doc_b: doc_b.clone(),
            alpha,
            seed: a.seed,
        };
        let text = mix_tokens(&spec)?.join(" ");
        let img = ck.model.generate(&text, &ck.vocab)?;
        let name = format!("mix_{i:02}_alpha_{alpha}.png");
        save_image(&img, &out.join(&name))?;
        rows.push(json!({ "alpha": alpha, "file": name, "text": text }));
        images.push(img);
    }
    if a.strip {
        save_image(&tile_images(&images, 2)?, &out.join("strip.png"))?;
    }
    write_json(
        &out.join("config.json"),
        &json!({
            "command": "mix",
            "checkpoint": a.checkpoint,
            "text_a": a.text_a,
            "text_b": a.text_b,
            "seed": a.seed,
            "images": rows,
        }),
    )
}

fn sweep(a: SweepArgs) -> Result<()> {
    let out = out_dir(a.out, "sweep")?;
    let resolved = resolve(&a.model)?;
    let base: TrainConfig = resolved.train.clone();
    let full = load_manifest(&a.manifest)?;
    let (train_m, val_m) =
        split_manifest(&full, a.val_manifest.as_deref(), Some(DEFAULT_VAL_FRACTION), base.seed)?;
    let val_m = val_m.expect("validation split");
    let vocab = build_vocabulary(&train_m, resolved.min_count)?;
    let model_cfg = resolved.model_for(vocab.len(), full.num_classes());
    model_cfg.validate()?;
    let classes = full.classes().to_vec();
    let train_set = load_set(&train_m, &classes, &model_cfg, &vocab)?;
    let val_set = load_set(&val_m, &classes, &model_cfg, &vocab)?;
    let cfg = SweepConfig {
        lambdas: a.lambdas.clone(),
        runs: a.runs,
        epochs: base.epochs,
        base: base.clone(),
        grid_samples: a.grid_samples,
    };
    write_json(
        &out.join("config.json"),
        &json!({
            "command": "sweep",
            "manifest": a.manifest,
            "val_manifest": a.val_manifest,
            "lambdas": a.lambdas,
            "runs": a.runs,
            "epochs": base.epochs,
            "seed": base.seed,
            "model": model_cfg,
            "train": base,
            "train_samples": train_set.len(),
            "val_samples": val_set.len(),
        }),
    )?;
    let result = lambda_sweep(&model_cfg, &train_set, &val_set, &cfg, Some(&out))?;
    if !a.quiet {
        for s in &result.summary {
            eprintln!(
                "lambda={} val_acc={:.4}±{:.4} pixel_mse={:.5}",
                s.lambda, s.val_acc_mean, s.val_acc_std, s.pixel_mse_mean
            );
        }
    }
    Ok(())
}

fn export(a: ExportArgs) -> Result<()> {
    let out = out_dir(a.out, "export")?;
    let ck = Checkpoint::<f32>::load(&a.checkpoint)?;
    let m = load_manifest(&a.manifest)?;
    let report = export_encodings(&ck.model, &m, &ck.vocab, &out, &a.tag)?;
    println!("exported={} manifest={}", report.manifest.len(), report.manifest_path.display());
    Ok(())
}
