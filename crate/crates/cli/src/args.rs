//! Command-line flags.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use flowforge::flows::{ConvKind, ModelSpec};

fn positive_f64(s: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if v > 0.0 && v.is_finite() => Ok(v),
        _ => Err(format!("expected a positive number, got {s:?}")),
    }
}

fn non_negative_f64(s: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if v >= 0.0 && v.is_finite() => Ok(v),
        _ => Err(format!("expected a non-negative number, got {s:?}")),
    }
}

#[derive(Debug, Parser)]
#[command(name = "flowforge", version, about = "Normalizing flows with exactly invertible convolutions")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model by maximum likelihood and write a checkpoint.
    Train(TrainArgs),
    /// Bits per dimension of a checkpoint on the test split.
    Eval(EvalArgs),
    /// Write a grid of samples as a PPM/PGM image.
    Sample(SampleArgs),
    /// Run the randomized invariant suites.
    Check(CheckArgs),
    /// Time the inversion strategies and print a markdown table.
    Bench(BenchArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ConvName {
    W1x1,
    Plu,
    Qr,
    Emerging,
    Periodic,
}

#[derive(Clone, Debug, Args)]
pub struct DataArgs {
    /// `synthetic:textures`, `synthetic:blobs` or a directory of PPM/PGM files.
    #[arg(long, default_value = "synthetic:textures")]
    pub data: String,
    /// Side length of synthetic images.
    #[arg(long, default_value_t = 16, value_parser = clap::value_parser!(u32).range(1..))]
    pub size: u32,
    /// Channels of synthetic images.
    #[arg(long, default_value_t = 3, value_parser = clap::value_parser!(u32).range(1..))]
    pub channels: u32,
    #[arg(long, default_value_t = 512, value_parser = clap::value_parser!(u32).range(1..))]
    pub num_train: u32,
    #[arg(long, default_value_t = 128, value_parser = clap::value_parser!(u32).range(1..))]
    pub num_test: u32,
}

#[derive(Clone, Debug, Args)]
pub struct ModelArgs {
    #[arg(long, default_value_t = 2, value_parser = clap::value_parser!(u32).range(1..))]
    pub levels: u32,
    /// Flow steps per level.
    #[arg(long, default_value_t = 4, value_parser = clap::value_parser!(u32).range(1..))]
    pub depth: u32,
    /// Hidden channels of the coupling networks.
    #[arg(long, default_value_t = 64, value_parser = clap::value_parser!(u32).range(1..))]
    pub width: u32,
    #[arg(long, value_enum, default_value_t = ConvName::W1x1)]
    pub conv: ConvName,
    /// Receptive field of emerging and periodic convolutions.
    #[arg(long, default_value_t = 3, value_parser = clap::value_parser!(u32).range(1..))]
    pub kernel: u32,
    /// Householder reflections per QR layer (default: one per channel).
    #[arg(long, value_parser = clap::value_parser!(u32).range(1..))]
    pub num_reflections: Option<u32>,
}

impl ModelArgs {
    pub fn conv_kind(&self) -> ConvKind {
        let kernel = self.kernel as usize;
        match self.conv {
            ConvName::W1x1 => ConvKind::W1x1,
            ConvName::Plu => ConvKind::Plu,
            ConvName::Qr => ConvKind::Qr { reflections: self.num_reflections.map(|k| k as usize) },
            ConvName::Emerging => ConvKind::Emerging { kernel },
            ConvName::Periodic => ConvKind::Periodic { kernel },
        }
    }

    pub fn spec(&self, channels: usize, height: usize, width: usize, seed: u64) -> ModelSpec {
        ModelSpec {
            levels: self.levels as usize,
            depth: self.depth as usize,
            coupling_width: self.width as usize,
            conv: self.conv_kind(),
            channels,
            height,
            width,
            seed,
        }
    }
}

#[derive(Clone, Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, default_value_t = 1e-3, value_parser = positive_f64)]
    pub lr: f64,
    #[arg(long, default_value_t = 32, value_parser = clap::value_parser!(u32).range(1..))]
    pub batch: u32,
    #[arg(long, default_value_t = 1000)]
    pub steps: u64,
    /// Steps of linear learning-rate warmup.
    #[arg(long, default_value_t = 100)]
    pub warmup: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "model.ckpt")]
    pub checkpoint: PathBuf,
    #[arg(long, default_value_t = 10, value_parser = clap::value_parser!(u64).range(1..))]
    pub log_every: u64,
    #[arg(long, default_value_t = 100, value_parser = clap::value_parser!(u64).range(1..))]
    pub checkpoint_every: u64,
}

#[derive(Clone, Debug, Args)]
pub struct EvalArgs {
    #[arg(long, default_value = "synthetic:textures")]
    pub data: String,
    #[arg(long, default_value_t = 128, value_parser = clap::value_parser!(u32).range(1..))]
    pub num_test: u32,
    #[arg(long, default_value = "model.ckpt")]
    pub checkpoint: PathBuf,
    #[arg(long, default_value_t = 32, value_parser = clap::value_parser!(u32).range(1..))]
    pub batch: u32,
    /// Seed of the synthetic test set and of the dequantization noise.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Clone, Debug, Args)]
pub struct SampleArgs {
    #[arg(long, default_value = "model.ckpt")]
    pub checkpoint: PathBuf,
    #[arg(long, default_value = "samples.ppm")]
    pub out: PathBuf,
    #[arg(long, default_value_t = 100, value_parser = clap::value_parser!(u32).range(1..))]
    pub num_samples: u32,
    #[arg(long, default_value_t = 1.0, value_parser = non_negative_f64)]
    pub temperature: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Clone, Debug, Args)]
pub struct CheckArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Random trials per suite and layer kind.
    #[arg(long, default_value_t = 30, value_parser = clap::value_parser!(u32).range(1..))]
    pub trials: u32,
    /// Debug hook: zero the diagonal center tap of this channel in emerging layers.
    #[arg(long, hide = true)]
    pub fault_zero_tap: Option<usize>,
}

#[derive(Clone, Debug, Args)]
pub struct BenchArgs {
    #[arg(long, default_value_t = 16, value_parser = clap::value_parser!(u32).range(1..))]
    pub size: u32,
    #[arg(long, default_value_t = 4, value_parser = clap::value_parser!(u32).range(1..))]
    pub channels: u32,
    #[arg(long, default_value_t = 3, value_parser = clap::value_parser!(u32).range(1..))]
    pub kernel: u32,
    #[arg(long, default_value_t = 100, value_parser = clap::value_parser!(u32).range(1..))]
    pub batch: u32,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}
