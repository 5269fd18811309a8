use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use pictext_core::PixelLoss;

/// Joint text classification and text-to-image encoding.
#[derive(Debug, Parser)]
#[command(name = "pictext", version)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model on a manifest.
    Train(TrainArgs),
    /// Report classification accuracy of a checkpoint on a manifest.
    Eval(EvalArgs),
    /// Render the image layer for one text.
    Generate(GenerateArgs),
    /// Render images for token mixtures of two texts.
    Mix(MixArgs),
    /// Train runs over a list of lambda values and tabulate validation accuracy.
    Sweep(SweepArgs),
    /// Write the image layer of every manifest text as a PNG dataset.
    Export(ExportArgs),
}

/// Model and optimization flags shared by `train` and `sweep`. Unset flags
/// fall back to the `--config` file, then to built-in defaults.
#[derive(Debug, Args)]
pub struct ModelArgs {
    /// TOML file with optional `[model]` and `[train]` tables.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Pixel loss normalization.
    #[arg(long, value_parser = parse_loss)]
    pub loss: Option<PixelLoss>,
    /// Weight of the pixel loss (default 0.8 for sum, 6 for mean).
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Tokens per document after padding or truncation.
    #[arg(long)]
    pub seq_len: Option<usize>,
    /// Drop tokens seen fewer times than this when building the vocabulary.
    #[arg(long)]
    pub min_count: Option<usize>,
    /// Small preset: widths divided by 16, 32x32 images, 8-token documents
    /// (classifier convs keep their width).
    #[arg(long)]
    pub tiny: bool,
    /// Divide text, generator and FC widths by this factor, keeping the image size.
    #[arg(long)]
    pub scale: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Training manifest (TSV: label, image path, text).
    #[arg(long)]
    pub manifest: PathBuf,
    /// Separate validation manifest.
    #[arg(long, conflicts_with = "val_fraction")]
    pub val_manifest: Option<PathBuf>,
    /// Carve this fraction of the training manifest out for validation.
    #[arg(long)]
    pub val_fraction: Option<f64>,
    /// Continue from a checkpoint written by an earlier `train`; `--epochs`
    /// is then the total epoch count.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Also write `epoch_<n>.ckpt` every this many epochs.
    #[arg(long)]
    pub checkpoint_every: Option<usize>,
    /// Output directory [default: $PICTEXT_OUT_DIR/<command>].
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, short)]
    pub quiet: bool,
    #[command(flatten)]
    pub model: ModelArgs,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub text: String,
    /// PNG file to write.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct MixArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub text_a: String,
    #[arg(long)]
    pub text_b: String,
    /// Shares of `text_a`, each in [0, 1].
    #[arg(long, value_delimiter = ',', default_value = "0,0.25,0.5,0.75,1")]
    pub alphas: Vec<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Also write all images side by side as `strip.png`.
    #[arg(long)]
    pub strip: bool,
    /// Output directory [default: $PICTEXT_OUT_DIR/<command>].
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Validation manifest; by default 10% of the manifest is carved out.
    #[arg(long)]
    pub val_manifest: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', required = true)]
    pub lambdas: Vec<f64>,
    #[arg(long, default_value_t = 5)]
    pub runs: usize,
    /// Samples per image grid.
    #[arg(long, default_value_t = 8)]
    pub grid_samples: usize,
    /// Output directory [default: $PICTEXT_OUT_DIR/<command>].
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, short)]
    pub quiet: bool,
    #[command(flatten)]
    pub model: ModelArgs,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    /// Output directory [default: $PICTEXT_OUT_DIR/<command>].
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Label for the emitted manifest, `encodings_<tag>.tsv`.
    #[arg(long, default_value = "export")]
    pub tag: String,
}

fn parse_loss(s: &str) -> Result<PixelLoss, String> {
    s.parse().map_err(|e: pictext_core::Error| e.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    fn parse(args: &[&str]) -> Result<Cli, clap::Error> {
        Cli::try_parse_from(std::iter::once("pictext").chain(args.iter().copied()))
    }

    #[test]
    fn definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn train_command() {
        let cli = parse(&[
            "train", "--manifest", "train.tsv", "--lambda", "0.8", "--epochs", "100", "--seed", "7", "--out", "run1/",
        ])
        .unwrap();
        let Command::Train(t) = cli.command else { panic!() };
        assert_eq!(t.manifest, PathBuf::from("train.tsv"));
        assert_eq!(t.model.lambda, Some(0.8));
        assert_eq!(t.model.epochs, Some(100));
        assert_eq!(t.model.seed, Some(7));
        assert_eq!(t.out, Some(PathBuf::from("run1/")));
    }

    #[test]
    fn generate_command() {
        let cli = parse(&["generate", "--checkpoint", "ckpt", "--text", "red hammer", "--out", "img.png"]).unwrap();
        assert!(matches!(cli.command, Command::Generate(g) if g.text == "red hammer"));
    }

    #[test]
    fn sweep_lambda_list() {
        let cli = parse(&[
            "sweep", "--manifest", "m.tsv", "--lambdas", "0,0.2,0.4,0.6,0.8,1,1.2,1.4,1.6,1.8,2", "--epochs", "20",
            "--runs", "5", "--out", "s",
        ])
        .unwrap();
        let Command::Sweep(s) = cli.command else { panic!() };
        assert_eq!(s.lambdas.len(), 11);
        assert_eq!(s.runs, 5);
        assert_eq!(s.model.epochs, Some(20));
    }

    #[test]
    fn loss_variant_flag() {
        let cli = parse(&["train", "--manifest", "m", "--out", "o", "--loss", "mean"]).unwrap();
        let Command::Train(t) = cli.command else { panic!() };
        assert_eq!(t.model.loss, Some(PixelLoss::Mean));
        assert!(parse(&["train", "--manifest", "m", "--out", "o", "--loss", "max"]).is_err());
    }

    #[test]
    fn unknown_and_missing_flags() {
        assert!(parse(&["train", "--manifest", "m", "--out", "o", "--bogus"]).is_err());
        let e = parse(&["eval", "--checkpoint", "c"]).unwrap_err();
        assert!(e.to_string().contains("--manifest"));
    }
}
