use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use pictext_core::data::save_image;
use pictext_core::Tensor;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_pictext"));
    c.env_remove("PICTEXT_OUT_DIR");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn pictext")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Eight samples, two classes, 32x32 images.
fn dataset(dir: &Path) -> PathBuf {
    let texts = [
        ("tools", "heavy steel hammer claw", [0.9, 0.1, 0.1]),
        ("tools", "red rubber mallet grip", [0.8, 0.2, 0.1]),
        ("tools", "small claw hammer wood", [0.9, 0.2, 0.2]),
        ("tools", "steel sledge hammer long", [0.7, 0.1, 0.2]),
        ("screws", "brass wood screw pack", [0.1, 0.2, 0.9]),
        ("screws", "steel machine screw m4", [0.2, 0.1, 0.8]),
        ("screws", "self tapping screw box", [0.1, 0.1, 0.7]),
        ("screws", "drywall screw black pack", [0.2, 0.2, 0.9]),
    ];
    let mut tsv = String::new();
    for (i, (label, text, color)) in texts.iter().enumerate() {
        let plane = 32 * 32;
        let mut data = vec![0f32; 3 * plane];
        for c in 0..3 {
            data[c * plane..(c + 1) * plane].fill(color[c]);
        }
        let name = format!("img{i}.png");
        save_image(&Tensor::from_vec(&[3, 32, 32], data).unwrap(), &dir.join(&name)).unwrap();
        tsv.push_str(&format!("{label}\t{name}\t{text}\n"));
    }
    let path = dir.join("train.tsv");
    std::fs::write(&path, tsv).unwrap();
    path
}

fn train(manifest: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec![
        "train", "--manifest", p(manifest), "--tiny", "--batch-size", "4", "--seed", "3", "--quiet",
        "--out", p(out),
    ];
    args.extend_from_slice(extra);
    run(&args)
}

#[test]
fn train_then_use_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = dataset(dir.path());
    let out = dir.path().join("run");
    let o = train(&manifest, &out, &["--epochs", "2"]);
    assert!(o.status.success(), "{}", stderr(&o));
    for f in ["metrics.csv", "model.ckpt", "config.json", "vocab.txt"] {
        assert!(out.join(f).is_file(), "missing {f}");
    }
    let metrics = std::fs::read_to_string(out.join("metrics.csv")).unwrap();
    assert!(metrics.starts_with("epoch,loss_total,loss_l0,loss_pixel,train_acc,val_acc\n"));
    assert_eq!(metrics.lines().count(), 3);
    let config: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("config.json")).unwrap()).unwrap();
    assert_eq!(config["seed"], 3);
    assert_eq!(config["train"]["loss"]["lambda"], 0.8);

    let ckpt = out.join("model.ckpt");
    let o = run(&["eval", "--checkpoint", p(&ckpt), "--manifest", p(&manifest)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let acc: f64 = stdout(&o).trim().strip_prefix("accuracy=").unwrap().parse().unwrap();
    assert!((0.0..=1.0).contains(&acc));

    let img = dir.path().join("gen/img.png");
    let o = run(&["generate", "--checkpoint", p(&ckpt), "--text", "steel hammer", "--out", p(&img)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(img.is_file());

    let mix = dir.path().join("mix");
    let o = run(&[
        "mix", "--checkpoint", p(&ckpt), "--text-a", "heavy steel hammer claw", "--text-b", "brass wood screw pack",
        "--alphas", "0,0.25,0.5,0.75,1", "--out", p(&mix),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let pngs = std::fs::read_dir(&mix).unwrap().filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "png")).count();
    assert_eq!(pngs, 5);

    let exp = dir.path().join("enc");
    let o = run(&["export", "--checkpoint", p(&ckpt), "--manifest", p(&manifest), "--out", p(&exp), "--tag", "sum"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(exp.join("000000_tools.png").is_file());
    assert!(exp.join("000007_screws.png").is_file());
    let exported = std::fs::read_to_string(exp.join("encodings_sum.tsv")).unwrap();
    assert_eq!(exported.lines().count(), 8);
}

#[test]
fn identical_flags_give_identical_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = dataset(dir.path());
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert!(train(&manifest, &a, &["--epochs", "2", "--val-fraction", "0.25"]).status.success());
    assert!(train(&manifest, &b, &["--epochs", "2", "--val-fraction", "0.25"]).status.success());
    let read = |d: &Path| std::fs::read(d.join("metrics.csv")).unwrap();
    assert_eq!(read(&a), read(&b));
    let text = String::from_utf8(read(&a)).unwrap();
    assert!(!text.lines().nth(1).unwrap().ends_with(','), "validation accuracy missing");
}

#[test]
fn resume_continues_the_same_run() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = dataset(dir.path());
    let straight = dir.path().join("straight");
    assert!(train(&manifest, &straight, &["--epochs", "3"]).status.success());
    let first = dir.path().join("first");
    assert!(train(&manifest, &first, &["--epochs", "1"]).status.success());
    let resumed = dir.path().join("resumed");
    let o = train(&manifest, &resumed, &["--epochs", "3", "--resume", p(&first.join("model.ckpt"))]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(
        std::fs::read_to_string(straight.join("metrics.csv")).unwrap(),
        std::fs::read_to_string(resumed.join("metrics.csv")).unwrap()
    );
}

#[test]
fn sweep_writes_tables_and_grids() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = dataset(dir.path());
    let out = dir.path().join("sweep");
    let o = run(&[
        "sweep", "--manifest", p(&manifest), "--lambdas", "0,0.8", "--runs", "2", "--epochs", "1", "--tiny",
        "--batch-size", "4", "--grid-samples", "1", "--quiet", "--out", p(&out),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = std::fs::read_to_string(out.join("sweep.csv")).unwrap();
    assert!(csv.starts_with("lambda,run,epochs,val_acc\n"));
    assert_eq!(csv.lines().count(), 5);
    assert!(out.join("sweep_summary.csv").is_file());
    assert!(out.join("grid_lambda_0.png").is_file());
    assert!(out.join("grid_lambda_0.8.png").is_file());
}

#[test]
fn out_dir_defaults_to_env_root() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = dataset(dir.path());
    let root = dir.path().join("root");
    let o = bin()
        .args(["train", "--manifest", p(&manifest), "--tiny", "--epochs", "1", "--batch-size", "4", "--quiet"])
        .env("PICTEXT_OUT_DIR", &root)
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(root.join("train/metrics.csv").is_file());

    let o = run(&["train", "--manifest", p(&manifest), "--tiny", "--epochs", "1"]);
    assert_eq!(o.status.code(), Some(1));
}

fn error_line(o: &Output) -> serde_json::Value {
    let line = stderr(o).lines().last().unwrap().to_string();
    serde_json::from_str(&line).unwrap_or_else(|_| panic!("not JSON: {line}"))
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");

    let o = run(&["train", "--manifest", "m.tsv", "--out", p(&out), "--bogus"]);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(error_line(&o)["error"]["kind"], "usage");

    let o = run(&["eval", "--checkpoint", "c"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("--manifest"));

    let o = run(&["train", "--manifest", p(&dir.path().join("missing.tsv")), "--out", p(&out)]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(error_line(&o)["error"]["code"], 2);

    let bad = dir.path().join("bad.tsv");
    std::fs::write(&bad, "a\tx.png\n").unwrap();
    let o = run(&["train", "--manifest", p(&bad), "--out", p(&out)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains(":1:"), "{}", stderr(&o));

    let manifest = dataset(dir.path());
    let o = run(&["train", "--manifest", p(&manifest), "--out", p(&out), "--tiny", "--batch-size", "1"]);
    assert_eq!(o.status.code(), Some(1));

    let o = run(&["generate", "--checkpoint", p(&manifest), "--text", "x", "--out", p(&out.join("x.png"))]);
    assert_eq!(o.status.code(), Some(2));

    let o = run(&["--help"]);
    assert_eq!(o.status.code(), Some(0));
}

#[test]
fn diverging_training_is_a_numeric_error() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = dataset(dir.path());
    let o = train(&manifest, &dir.path().join("o"), &["--lr", "1e30", "--epochs", "5"]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert_eq!(error_line(&o)["error"]["kind"], "numeric");
}
