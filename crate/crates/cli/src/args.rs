use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

/// Conditional flow matching over activation vectors: train a velocity
/// field, then generate, edit, classify and analyze activations with it.
///
/// Exit codes: 0 success, 1 runtime failure, 2 usage or validation error.
#[derive(Debug, Parser)]
#[command(name = "flowsteer", version)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic UAFC1 corpus.
    Synth(SynthArgs),
    /// Train a velocity model on a corpus.
    Train(TrainArgs),
    /// Sample activations from the prior and transport them to t = 1.
    Generate(GenerateArgs),
    /// Edit every record of a corpus from a source to a target condition.
    Edit(EditArgs),
    /// Label records by lowest reconstruction energy.
    Classify(ClassifyArgs),
    /// Evaluate an edit metric over a grid of guidance scales.
    Sweep(SweepArgs),
    /// Serve edit requests over stdin/stdout frames until end of input.
    EditServer(EditServerArgs),
    /// Per-position alignment between edits and a reference direction.
    Analyze(AnalyzeArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SynthKind {
    /// One condition at a single mean (`--scale 0` gives a point mass).
    PointMass,
    /// Two conditions with means `+separation` and `-separation`.
    TwoClusters,
    /// Two conditions with equal means, except that condition 1 gets
    /// `--planted-offset` along the first axis before `--planted-before`.
    Planted,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Output corpus path.
    #[arg(long)]
    pub out: PathBuf,
    /// JSON synthesis spec; replaces all shape flags below.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "two-clusters")]
    pub kind: SynthKind,
    #[arg(long, default_value_t = 8)]
    pub dim: usize,
    /// Mean coordinate magnitude.
    #[arg(long, default_value_t = 1.0)]
    pub separation: f64,
    /// Per-coordinate noise standard deviation.
    #[arg(long, default_value_t = 0.5)]
    pub scale: f64,
    /// Records per condition.
    #[arg(long, default_value_t = 1000)]
    pub records: usize,
    #[arg(long, default_value_t = 1)]
    pub positions: u32,
    #[arg(long, default_value_t = 3.0)]
    pub planted_offset: f64,
    #[arg(long, default_value_t = 4)]
    pub planted_before: u32,
    /// Store per-layer standardization statistics in the header.
    #[arg(long)]
    pub normalize: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    /// Output checkpoint path.
    #[arg(long)]
    pub out: PathBuf,
    /// Per-epoch `epoch,loss,lr` CSV.
    #[arg(long)]
    pub loss_csv: Option<PathBuf>,
    /// JSON file with optional `train` and `model` sections. Flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub warmup_steps: Option<usize>,
    /// Probability of replacing the condition with the null embedding.
    #[arg(long)]
    pub p_drop: Option<f64>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub hidden_dim: Option<usize>,
    #[arg(long)]
    pub num_blocks: Option<usize>,
    #[arg(long)]
    pub time_embed_dim: Option<usize>,
    #[arg(long)]
    pub max_layers: Option<usize>,
    #[arg(long)]
    pub position_buckets: Option<usize>,
    #[arg(long)]
    pub position_bucket_width: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PresetName {
    Persona,
    Truthfulness,
    Concept,
    Constraint,
}

impl PresetName {
    pub fn as_str(self) -> &'static str {
        match self {
            PresetName::Persona => "persona",
            PresetName::Truthfulness => "truthfulness",
            PresetName::Concept => "concept",
            PresetName::Constraint => "constraint",
        }
    }
}

/// Solver settings shared by the editing commands. A preset fills in
/// strength, step counts and guidance; explicit flags override it.
#[derive(Debug, Clone, Args)]
pub struct SolverArgs {
    #[arg(long, value_enum)]
    pub preset: Option<PresetName>,
    /// Edit strength lambda in [0, 1]; inversion depth is tau = 1 - lambda.
    #[arg(long)]
    pub strength: Option<f64>,
    /// Forward Euler steps.
    #[arg(long)]
    pub steps: Option<usize>,
    /// Backward (inversion) Euler steps.
    #[arg(long)]
    pub inversion_steps: Option<usize>,
    /// Guidance scale w of the forward leg.
    #[arg(long)]
    pub guidance: Option<f64>,
    /// Guidance scale of the inversion leg.
    #[arg(long)]
    pub inversion_guidance: Option<f64>,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// UAFC1 file whose condition table (and normalization) is used.
    #[arg(long)]
    pub conditions: PathBuf,
    #[arg(long)]
    pub condition: u32,
    #[arg(long, default_value_t = 100)]
    pub count: usize,
    #[arg(long, default_value_t = 30)]
    pub steps: usize,
    #[arg(long, default_value_t = 1.0)]
    pub guidance: f64,
    #[arg(long, default_value_t = 0)]
    pub layer: u32,
    #[arg(long, default_value_t = 0)]
    pub position: u32,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output corpus path.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EditArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Input corpus; its condition table resolves the ids.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub source: u32,
    #[arg(long)]
    pub target: u32,
    #[command(flatten)]
    pub solver: SolverArgs,
}

#[derive(Debug, Args)]
pub struct ClassifyArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Labeled corpus; record condition ids are the labels.
    #[arg(long)]
    pub corpus: PathBuf,
    /// Candidate condition ids.
    #[arg(long, value_delimiter = ',', required = true)]
    pub candidates: Vec<u32>,
    /// Inversion depth.
    #[arg(long, default_value_t = 0.5)]
    pub tau: f64,
    #[arg(long, default_value_t = 30)]
    pub steps: usize,
    #[arg(long, default_value_t = 1.0)]
    pub guidance: f64,
    #[arg(long, default_value_t = 1.0)]
    pub inversion_guidance: f64,
    /// Positive class for the binary score; defaults to the first candidate.
    #[arg(long)]
    pub positive: Option<u32>,
    /// Require an AUC; exit 2 if it cannot be computed.
    #[arg(long)]
    pub auc: bool,
    /// Per-record CSV output.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Metric {
    /// Mean L2 norm of the edit.
    EditDistance,
    /// Mean L2 distance from the target condition's centroid.
    TargetDistance,
    /// Fraction of records moved closer to the target centroid.
    CloserFraction,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub source: u32,
    #[arg(long)]
    pub target: u32,
    /// `start,end,step`, inclusive; defaults to the preset's grid.
    #[arg(long, value_delimiter = ',')]
    pub grid: Option<Vec<f64>>,
    #[arg(long, value_enum, default_value = "target-distance")]
    pub metric: Metric,
    /// Corpus supplying the target centroid; defaults to the input's
    /// target-condition records.
    #[arg(long)]
    pub reference: Option<PathBuf>,
    #[command(flatten)]
    pub solver: SolverArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EditServerArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// UAFC1 file whose condition table (and normalization) is used.
    #[arg(long)]
    pub conditions: PathBuf,
    #[arg(long)]
    pub source: u32,
    #[arg(long)]
    pub target: u32,
    #[command(flatten)]
    pub solver: SolverArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    Caa,
    Repe,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub source: u32,
    #[arg(long)]
    pub target: u32,
    #[arg(long, value_enum, default_value = "caa")]
    pub method: MethodArg,
    #[command(flatten)]
    pub solver: SolverArgs,
    /// Profile CSV `bucket,mean_cosine,count`.
    #[arg(long)]
    pub out: PathBuf,
    /// Reference directions as a UADR1 sidecar.
    #[arg(long)]
    pub directions_out: Option<PathBuf>,
    /// Reference directions as CSV `layer,index,value`.
    #[arg(long)]
    pub directions_csv: Option<PathBuf>,
}
