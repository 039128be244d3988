//! Argument definitions.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "tonequant", version, about = "Discrete speech unit quantisers and tone/phone probing")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// Seed for every random stream; echoed in all outputs [default: 42,
    /// or the seed of a --spec file].
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Corpus manifest (`manifest.json` written by `synth`).
    #[arg(long, global = true)]
    pub manifest: Option<PathBuf>,

    /// Output directory (or file for `report`).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,

    /// Log progress to stderr (repeat for more detail).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic corpus and its manifest.
    Synth(SynthArgs),
    /// Fit a quantiser or codec on the training split and save it.
    Fit(FitArgs),
    /// Quantise every split with a saved model and write unit TSVs.
    Quantise(QuantiseArgs),
    /// Train and evaluate phone and tone probes on one representation.
    Probe(ProbeArgs),
    /// Compare quantisers at a matched code budget.
    Compare(CompareArgs),
    /// Sweep classic K-means over codebook sizes, frame-level and pooled.
    Sweep(SweepArgs),
    /// Probe each level of segmental residual K-means over phone-level sizes.
    Residual(ResidualArgs),
    /// Merge result CSVs into a Markdown or long-format CSV report.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// JSON generator spec; flags below override its fields.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long)]
    pub num_phones: Option<usize>,
    #[arg(long)]
    pub num_consonants: Option<usize>,
    #[arg(long)]
    pub num_tones: Option<usize>,
    #[arg(long)]
    pub dim: Option<usize>,
    /// Spread of the phone means.
    #[arg(long)]
    pub phone_spread: Option<f64>,
    /// Magnitude of the tone contour.
    #[arg(long)]
    pub tone_scale: Option<f64>,
    /// Per-frame noise level.
    #[arg(long)]
    pub noise_scale: Option<f64>,
    #[arg(long)]
    pub train_utterances: Option<usize>,
    #[arg(long)]
    pub val_utterances: Option<usize>,
    #[arg(long)]
    pub test_utterances: Option<usize>,
}

/// Options shared by commands that build an experiment spec.
#[derive(Debug, Args)]
pub struct SpecArgs {
    /// JSON experiment spec; flags override its fields.
    #[arg(long)]
    pub spec: Option<PathBuf>,

    /// Maximum training epochs of the recurrent probe.
    #[arg(long)]
    pub probe_epochs: Option<usize>,

    /// Maximum training epochs of the neural codecs.
    #[arg(long)]
    pub codec_epochs: Option<usize>,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// Representation name, e.g. classic-500, rvq-125x4, or a short family
    /// name resolved against --budget.
    #[arg(long)]
    pub quantiser: String,
    #[arg(long, default_value_t = 500)]
    pub budget: usize,
    #[command(flatten)]
    pub spec: SpecArgs,
}

#[derive(Debug, Args)]
pub struct QuantiseArgs {
    /// Directory written by `fit`.
    #[arg(long)]
    pub model: PathBuf,
}

#[derive(Debug, Args)]
pub struct ProbeArgs {
    /// Representation to probe; ignored when --model is given.
    #[arg(long, default_value = "latent")]
    pub quantiser: String,
    #[arg(long, default_value_t = 500)]
    pub budget: usize,
    /// Directory written by `fit`; skips fitting.
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[command(flatten)]
    pub spec: SpecArgs,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    /// Total code budget shared by every quantiser.
    #[arg(long, default_value_t = 500)]
    pub budget: usize,
    /// Comma-separated quantisers (short family names or full names). The
    /// continuous baseline is always included.
    #[arg(
        long,
        value_delimiter = ',',
        default_value = "classic,vq,rvq2,rvq4,mean-pooled,svc,residual-frame,residual-segmental"
    )]
    pub quantisers: Vec<String>,
    #[command(flatten)]
    pub spec: SpecArgs,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// Comma-separated, strictly ascending codebook sizes.
    #[arg(long, value_delimiter = ',')]
    pub grid: Option<Vec<usize>>,
    #[command(flatten)]
    pub spec: SpecArgs,
}

#[derive(Debug, Args)]
pub struct ResidualArgs {
    /// Comma-separated, strictly ascending phone-level sizes.
    #[arg(long, value_delimiter = ',')]
    pub grid: Option<Vec<usize>>,
    /// Residual-level codebook size.
    #[arg(long)]
    pub residual_k: Option<usize>,
    #[command(flatten)]
    pub spec: SpecArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ReportFormat {
    Md,
    Csv,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Result CSVs written by compare, sweep or residual.
    #[arg(long, num_args = 1.., required = true)]
    pub inputs: Vec<PathBuf>,
    #[arg(long, value_enum, default_value_t = ReportFormat::Md)]
    pub format: ReportFormat,
}
