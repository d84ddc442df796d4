//! Command-line definitions.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "limexp", version, about = "LIME for images: sampling, closed-form limits and integrated gradients")]
pub struct Cli {
    /// Base random seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Directory for output files.
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,

    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    /// Experiment config (JSON), required by `compare` and `concentration`.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Cut an image into superpixels and write the partition.
    Segment(SegmentCmd),
    /// Run LIME on one image.
    Explain(ExplainCmd),
    /// Closed-form or enumerated limit explanation.
    Limit(LimitCmd),
    /// Integrated-gradients approximate explanation.
    Ig(IgCmd),
    /// LIME against integrated gradients over a set of images.
    Compare(ExperimentCmd),
    /// Spread of repeated LIME runs around the limit explanation.
    Concentration(ExperimentCmd),
    /// Run every oracle and identity suite.
    Selftest(SelftestCmd),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SegmenterKind {
    Grid,
    Quickshift,
}

/// Segmenter choice and parameters.
#[derive(Debug, Args)]
pub struct SegmenterArgs {
    #[arg(long, value_enum, default_value = "quickshift")]
    pub segmenter: SegmenterKind,
    /// Grid rows.
    #[arg(long, default_value_t = 4)]
    pub rows: usize,
    /// Grid columns.
    #[arg(long, default_value_t = 4)]
    pub cols: usize,
    /// Quickshift color weight.
    #[arg(long, default_value_t = 1.0)]
    pub ratio: f64,
    /// Quickshift kernel size.
    #[arg(long, default_value_t = 5.0)]
    pub kernel_size: f64,
    /// Quickshift maximum link distance.
    #[arg(long, default_value_t = 10.0)]
    pub max_dist: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ReplacementKind {
    /// Per-superpixel mean color.
    Mean,
    /// All zeros.
    Black,
    /// The color given by --color.
    Solid,
}

/// Image, partition source, replacement and model shared by the
/// single-image commands.
#[derive(Debug, Args)]
pub struct InputArgs {
    /// Image file (.pgm, .ppm, .pnm or grayscale .csv).
    #[arg(long)]
    pub image: PathBuf,
    /// Partition CSV; when absent the image is segmented with the segmenter flags.
    #[arg(long)]
    pub partition: Option<PathBuf>,
    #[command(flatten)]
    pub segmenter: SegmenterArgs,
    #[arg(long, value_enum, default_value = "mean")]
    pub replacement: ReplacementKind,
    /// Comma-separated solid color, one value per channel.
    #[arg(long, value_delimiter = ',')]
    pub color: Option<Vec<f64>>,
    /// Model spec file (JSON).
    #[arg(long)]
    pub model: PathBuf,
}

#[derive(Debug, Args)]
pub struct SegmentCmd {
    #[arg(long)]
    pub image: PathBuf,
    #[command(flatten)]
    pub segmenter: SegmenterArgs,
    /// Output partition CSV (sidecar JSON written next to it). Defaults to
    /// `partition.csv` in --out-dir.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

/// Parses a bandwidth, accepting `inf`.
pub fn parse_nu(s: &str) -> Result<f64, String> {
    let v = match s {
        "inf" | "infinity" => f64::INFINITY,
        _ => s.parse::<f64>().map_err(|e| e.to_string())?,
    };
    if v > 0.0 {
        Ok(v)
    } else {
        Err(format!("bandwidth must be > 0, got {s}"))
    }
}

#[derive(Debug, Args)]
pub struct ExplainCmd {
    #[command(flatten)]
    pub input: InputArgs,
    #[arg(long, default_value_t = 1000)]
    pub n: usize,
    /// Kernel bandwidth (`inf` allowed).
    #[arg(long, default_value = "0.25", value_parser = parse_nu)]
    pub nu: f64,
    #[arg(long, default_value_t = 1.0)]
    pub lambda: f64,
    #[arg(long, default_value_t = 5)]
    pub k: usize,
    #[arg(long, default_value_t = 64)]
    pub batch_size: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EstimatorKind {
    /// Closed form for shape detectors, linear and constant models.
    ClosedForm,
    /// Exact moments over all 2^d masks (d <= 20).
    Exact,
    /// Sampled moments.
    MonteCarlo,
}

#[derive(Debug, Args)]
pub struct LimitCmd {
    #[command(flatten)]
    pub input: InputArgs,
    /// Kernel bandwidth (`inf` gives the large-bandwidth limit).
    #[arg(long, default_value = "0.25", value_parser = parse_nu)]
    pub nu: f64,
    /// Defaults to the closed form when the model has one, else exact.
    #[arg(long, value_enum)]
    pub estimator: Option<EstimatorKind>,
    /// Samples for the Monte-Carlo estimator.
    #[arg(long, default_value_t = 10_000)]
    pub samples: usize,
    /// With --eta, also report the sample size the concentration bound asks for.
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long)]
    pub eta: Option<f64>,
}

#[derive(Debug, Args)]
pub struct IgCmd {
    #[command(flatten)]
    pub input: InputArgs,
    /// Riemann steps.
    #[arg(long, default_value_t = 20)]
    pub m: usize,
    /// Central finite differences when the model has no gradient.
    #[arg(long)]
    pub finite_difference: bool,
    /// Write per-pixel averaged gradients as CSV.
    #[arg(long)]
    pub dump_ig: Option<PathBuf>,
    #[arg(long, default_value_t = 5)]
    pub k: usize,
}

#[derive(Debug, Args)]
pub struct ExperimentCmd {
    /// Override the number of LIME samples.
    #[arg(long)]
    pub n: Option<usize>,
    /// Override the number of repetitions.
    #[arg(long)]
    pub repetitions: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SelftestCmd {
    /// Add this to σ_2 before checking the identities (checks that the suite can fail).
    #[arg(long, hide = true, default_value_t = 0.0)]
    pub perturb_sigma2: f64,
}
