use std::path::PathBuf;

use blobloss::{Connectivity, MatchingMode};
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(
    name = "blobloss",
    version,
    about = "Blob loss, connected components, instance metrics and synthetic experiments for 3-D volumes",
    arg_required_else_help = true,
    after_help = "Exit codes: 0 success, 1 usage error, 2 I/O or format error, 3 numerical failure.\n\
                  BLOBLIB_THREADS caps the number of worker threads."
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Label connected components of a mask.
    Cc(CcArgs),
    /// Evaluate the blob loss of a prediction.
    Loss(LossArgs),
    /// Volumetric, surface and instance metrics of a prediction.
    Eval(EvalArgs),
    /// Generate one synthetic sample.
    Synth(SynthArgs),
    /// Shape features of every instance.
    Shapes(ShapesArgs),
    /// Train and test one experiment.
    Train(TrainArgs),
    /// Paired dice vs blob dice experiments over several seeds.
    Compare(CompareArgs),
}

/// Output format for commands that report a single record.
#[derive(Debug, Clone, Copy, Args)]
#[group(multiple = false)]
pub struct FormatFlags {
    /// Emit JSON.
    #[arg(long)]
    pub json: bool,
    /// Emit CSV with a header row.
    #[arg(long)]
    pub csv: bool,
}

fn parse_connectivity(s: &str) -> Result<Connectivity, String> {
    s.parse().map_err(|e: blobloss::Error| e.to_string())
}

#[derive(Debug, Args)]
pub struct CcArgs {
    /// Input mask (a label volume is reduced to its foreground).
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Output label volume.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value = "26", value_parser = parse_connectivity)]
    pub connectivity: Connectivity,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BaseArg {
    Dice,
    Tversky,
}

#[derive(Debug, Args)]
pub struct LossArgs {
    /// Probability volume.
    #[arg(long)]
    pub pred: PathBuf,
    /// Ground-truth mask or label volume.
    #[arg(long)]
    pub gt: PathBuf,
    /// Instance labels; computed from the ground truth when absent.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    #[arg(long, default_value_t = 2.0)]
    pub alpha: f64,
    #[arg(long, default_value_t = 1.0)]
    pub beta: f64,
    #[arg(long, value_enum, default_value = "dice")]
    pub base: BaseArg,
    /// Tversky false-positive weight.
    #[arg(long = "tversky-a")]
    pub tversky_a: Option<f64>,
    /// Tversky false-negative weight.
    #[arg(long = "tversky-b")]
    pub tversky_b: Option<f64>,
    #[arg(long, default_value_t = blobloss::DEFAULT_EPSILON)]
    pub epsilon: f64,
    /// Compute every instance term over the whole volume.
    #[arg(long)]
    pub no_masking: bool,
    #[arg(long, default_value = "26", value_parser = parse_connectivity)]
    pub connectivity: Connectivity,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MatchingArg {
    Greedy,
    Overlap,
}

impl From<MatchingArg> for MatchingMode {
    fn from(m: MatchingArg) -> Self {
        match m {
            MatchingArg::Greedy => MatchingMode::Greedy,
            MatchingArg::Overlap => MatchingMode::Overlap,
        }
    }
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Probability volume or binary mask.
    #[arg(long)]
    pub pred: PathBuf,
    /// Ground-truth mask or label volume.
    #[arg(long)]
    pub gt: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    pub threshold: f64,
    #[arg(long, default_value = "26", value_parser = parse_connectivity)]
    pub connectivity: Connectivity,
    /// Surface Dice tolerance in voxels.
    #[arg(long, default_value_t = 1.0)]
    pub tol: f64,
    /// Voxels two instances must share to count as overlapping.
    #[arg(long, default_value_t = 1)]
    pub min_overlap: usize,
    #[arg(long, value_enum, default_value = "greedy")]
    pub matching: MatchingArg,
    #[command(flatten)]
    pub format: FormatFlags,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// JSON sample spec.
    #[arg(long)]
    pub spec: PathBuf,
    /// Writes `<prefix>_intensity.blv`, `<prefix>_gt.blv` and `<prefix>_labels.blv`.
    #[arg(long)]
    pub out_prefix: PathBuf,
    /// Overrides the spec's seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct ShapesArgs {
    /// Label volume (a mask is labeled with --connectivity).
    #[arg(long)]
    pub labels: PathBuf,
    #[arg(long, default_value = "26", value_parser = parse_connectivity)]
    pub connectivity: Connectivity,
    #[command(flatten)]
    pub format: FormatFlags,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Experiment config (JSON).
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory; overrides the config's `out`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Overrides the config's training seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    /// Experiment config (JSON).
    #[arg(long)]
    pub config: PathBuf,
    /// Runs seeds 1..=N.
    #[arg(long, default_value_t = 5, value_parser = clap::value_parser!(u64).range(1..))]
    pub seeds: u64,
    /// Also writes table.md, table.csv and runs.csv here.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Print CSV instead of Markdown.
    #[arg(long)]
    pub csv: bool,
}
