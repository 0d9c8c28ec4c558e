use std::net::SocketAddr;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "idclean", version, about = "Find and remove mislabeled samples in identity-labeled datasets")]
pub struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Seed for every randomized step.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Output directory; downstream stages also read their inputs from here by default.
    #[arg(long, global = true, default_value = ".")]
    pub out: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check that a manifest and an embedding file agree.
    Validate(DataArgs),
    /// Score every identity: scores.csv and scores.json.
    Score(ScoreArgs),
    /// Pick flagged identities and the pair threshold: flagged.json.
    Flag(FlagArgs),
    /// Flag pairs and build review queues: report.jsonl.
    Queue(QueueArgs),
    /// Serve the review API.
    Serve(ServeArgs),
    /// Compile verdicts into a cleaned manifest and removal list.
    Apply(ApplyArgs),
    /// Histograms and ROC tables, optionally before and after cleaning.
    Report(ReportArgs),
    /// Generate synthetic datasets.
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
pub struct DataArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub embeddings: PathBuf,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// L2-normalize embeddings before scoring.
    #[arg(long)]
    pub normalize: bool,
}

#[derive(Debug, Args)]
pub struct FlagArgs {
    /// Default: OUT/scores.json.
    #[arg(long)]
    pub scores: Option<PathBuf>,
    /// Fraction of scorable identities to flag (default 0.03).
    #[arg(long, conflicts_with = "count")]
    pub fraction: Option<f64>,
    /// Flag exactly this many identities instead of a fraction.
    #[arg(long)]
    pub count: Option<usize>,
    /// Use this pair threshold instead of the mean id score.
    #[arg(long)]
    pub pair_threshold: Option<f64>,
    /// Leave flagged identities out of the pair-threshold mean.
    #[arg(long)]
    pub exclude_flagged: bool,
}

#[derive(Debug, Args)]
pub struct QueueArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Default: OUT/scores.json.
    #[arg(long)]
    pub scores: Option<PathBuf>,
    /// Default: OUT/flagged.json.
    #[arg(long)]
    pub flagged: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub report: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    /// Image root; samples without a readable file get placeholder tiles.
    #[arg(long)]
    pub images: Option<PathBuf>,
    #[arg(long)]
    pub verdicts: PathBuf,
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub bind: SocketAddr,
    /// scores.json, for the histogram endpoint.
    #[arg(long)]
    pub scores: Option<PathBuf>,
    /// Embeddings, for the ROC endpoint.
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    /// Require this shared token on every API request.
    #[arg(long, env = "IDCLEAN_TOKEN")]
    pub token: Option<String>,
    /// Static review UI to serve at /.
    #[arg(long)]
    pub ui: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ApplyArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub verdicts: PathBuf,
    /// The report the verdicts answer; used for the flagged count.
    #[arg(long)]
    pub report: Option<PathBuf>,
    #[arg(long, default_value_t = 3)]
    pub min_remaining: usize,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Cleaned manifest; adds after-cleaning tables on the same bin edges.
    #[arg(long)]
    pub cleaned_manifest: Option<PathBuf>,
    #[arg(long)]
    pub normalize: bool,
    #[arg(long, default_value_t = 50)]
    pub bins: usize,
    /// Negative pairs for the ROC (default: as many as positives).
    #[arg(long)]
    pub negative_pairs: Option<usize>,
    #[arg(long, default_value_t = 1_000_000)]
    pub positive_cap: usize,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[command(subcommand)]
    pub kind: SynthKind,
}

#[derive(Debug, Subcommand)]
pub enum SynthKind {
    /// Spherical clusters with a few identities contaminated by imported samples.
    Planted(PlantedArgs),
    /// Large dataset with a realistic identity-size spread.
    Celeba(CelebaArgs),
}

#[derive(Debug, Args)]
pub struct PlantedArgs {
    #[arg(long, default_value_t = 100)]
    pub identities: usize,
    #[arg(long, default_value_t = 20)]
    pub samples_per_identity: usize,
    #[arg(long, default_value_t = 32)]
    pub dim: usize,
    #[arg(long, default_value_t = 3)]
    pub contaminated: usize,
    #[arg(long, default_value_t = 2)]
    pub imports: usize,
    #[arg(long, default_value_t = 3.0)]
    pub centroid_spread: f64,
    #[arg(long, default_value_t = 12.0)]
    pub min_centroid_distance: f64,
    /// Randomly permute identity labels afterwards (a chance-level fixture).
    #[arg(long)]
    pub shuffle_labels: bool,
}

#[derive(Debug, Args)]
pub struct CelebaArgs {
    #[arg(long, default_value_t = 10_177)]
    pub identities: usize,
    #[arg(long, default_value_t = 202_599)]
    pub samples: usize,
    #[arg(long, default_value_t = 512)]
    pub dim: usize,
    #[arg(long, default_value_t = 11)]
    pub min_size: usize,
    #[arg(long, default_value_t = 29)]
    pub max_size: usize,
    #[arg(long, default_value_t = 3.0)]
    pub centroid_spread: f64,
}
