use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use std::path::PathBuf;

#[derive(Debug, Parser, Serialize)]
#[command(name = "qsor", version, about = "Odor descriptor prediction from molecular structure")]
pub struct Cli {
    /// Root seed; every random stream is derived from it.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads (defaults to the available cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Command {
    /// Load, canonicalize, merge and filter descriptor CSVs, or inspect SMILES.
    Parse(ParseArgs),
    /// Export fingerprints.
    Fp(FpArgs),
    /// Assign molecules to train/val/test groups or folds.
    Split(SplitArgs),
    /// Fit a model on the train split.
    Train(TrainArgs),
    /// Score a trained model on one split.
    Eval(EvalArgs),
    /// Write per-molecule embeddings.
    Embed(EmbedArgs),
    /// Nearest-neighbor retrieval over an embedding table.
    Nn(NnArgs),
    /// Held-out descriptor transfer with network embeddings vs fingerprints.
    Transfer(TransferArgs),
    /// Co-occurrence, projection, density and per-descriptor tables.
    Report(ReportArgs),
    /// Generate a synthetic labeled corpus.
    Synth(SynthArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum FeatureKind {
    MorganCounts,
    MorganBits,
    PathBits,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Gcn,
    Mpnn,
    Rf,
    Knn,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum MetricArg {
    Jaccard,
    Cosine,
    Euclidean,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SubsetArg {
    Train,
    Val,
    Test,
    All,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitMethod {
    Stratified,
    Random,
}

/// Fingerprint overrides shared by several commands.
#[derive(Debug, Clone, Args, Serialize)]
pub struct FeatureArgs {
    /// Fingerprint family (model-specific default when omitted).
    #[arg(long, value_enum)]
    pub features: Option<FeatureKind>,
    /// Morgan radius or maximum path length.
    #[arg(long)]
    pub radius: Option<u32>,
    /// Folded length (power of two, at least 64).
    #[arg(long)]
    pub bits: Option<usize>,
}

#[derive(Debug, Args, Serialize)]
pub struct ParseArgs {
    /// Descriptor CSV with smiles and descriptors columns.
    #[arg(long, env = "QSOR_INPUT", required_unless_present = "smiles")]
    pub input: Option<PathBuf>,
    /// Second source merged on canonical form.
    #[arg(long)]
    pub merge: Option<PathBuf>,
    /// CSV mapping raw descriptor names to canonical ones.
    #[arg(long, env = "QSOR_SYNONYMS")]
    pub synonyms: Option<PathBuf>,
    /// Drop descriptors with fewer positives; 0 keeps everything.
    #[arg(long, default_value_t = 30)]
    pub min_count: usize,
    /// Keep molecules left without any descriptor.
    #[arg(long)]
    pub keep_unlabeled: bool,
    /// Normalized dataset CSV (id,smiles,descriptors,source).
    #[arg(long, required_unless_present = "smiles")]
    pub output: Option<PathBuf>,
    /// Rows that failed to parse.
    #[arg(long)]
    pub rejects: Option<PathBuf>,
    /// Vocabulary JSON with per-descriptor counts.
    #[arg(long)]
    pub vocabulary: Option<PathBuf>,
    /// Print a JSON summary for each SMILES instead of processing files.
    #[arg(long, conflicts_with_all = ["input", "output"])]
    pub smiles: Vec<String>,
}

#[derive(Debug, Args, Serialize)]
pub struct FpArgs {
    #[arg(long, env = "QSOR_INPUT")]
    pub input: PathBuf,
    /// Sparse CSV: id,n_bits,entries with entries as `index:count` joined by `;`.
    #[arg(long)]
    pub output: PathBuf,
    #[command(flatten)]
    pub features: FeatureArgs,
}

#[derive(Debug, Args, Serialize)]
pub struct SplitArgs {
    #[arg(long, env = "QSOR_INPUT")]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    /// Group proportions, e.g. 0.8,0.1,0.1 for train/val/test.
    #[arg(long, value_delimiter = ',', default_value = "0.8,0.1,0.1")]
    pub ratios: Vec<f64>,
    /// Label-combination order balanced by stratification.
    #[arg(long, default_value_t = 2)]
    pub order: u8,
    #[arg(long, value_enum, default_value_t = SplitMethod::Stratified)]
    pub method: SplitMethod,
    /// Produce k folds instead of ratio groups.
    #[arg(long, conflicts_with = "ratios")]
    pub folds: Option<usize>,
}

#[derive(Debug, Args, Serialize)]
pub struct TrainArgs {
    #[arg(long, value_enum)]
    pub model: ModelKind,
    #[arg(long, env = "QSOR_INPUT")]
    pub input: PathBuf,
    #[arg(long, env = "QSOR_SPLIT")]
    pub split: PathBuf,
    /// Model artifact JSON.
    #[arg(long)]
    pub output: PathBuf,
    /// Per-epoch history CSV (network models).
    #[arg(long)]
    pub history: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub trees: Option<usize>,
    #[arg(long)]
    pub max_depth: Option<usize>,
    #[arg(long)]
    pub min_leaf: Option<usize>,
    /// Neighbors for KNN.
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long, value_enum)]
    pub metric: Option<MetricArg>,
    #[command(flatten)]
    pub features: FeatureArgs,
}

#[derive(Debug, Args, Serialize)]
pub struct EvalArgs {
    /// Model artifact written by `train`.
    #[arg(long, env = "QSOR_MODEL")]
    pub model: PathBuf,
    #[arg(long, env = "QSOR_INPUT")]
    pub input: PathBuf,
    #[arg(long, env = "QSOR_SPLIT")]
    pub split: PathBuf,
    #[arg(long, value_enum, default_value_t = SubsetArg::Test)]
    pub subset: SubsetArg,
    /// Bootstrap resamples for confidence intervals; 0 disables them.
    #[arg(long, default_value_t = 1000)]
    pub resamples: usize,
    #[arg(long)]
    pub output: PathBuf,
    /// Per-molecule probabilities CSV.
    #[arg(long)]
    pub predictions: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct EmbedArgs {
    /// Network artifact; omit to embed with a fingerprint instead.
    #[arg(long, env = "QSOR_MODEL")]
    pub model: Option<PathBuf>,
    #[arg(long, env = "QSOR_INPUT")]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    #[command(flatten)]
    pub features: FeatureArgs,
}

#[derive(Debug, Args, Serialize)]
pub struct NnArgs {
    /// Embedding CSV written by `embed`.
    #[arg(long)]
    pub embeddings: PathBuf,
    /// Query ids; every row when omitted.
    #[arg(long)]
    pub query: Vec<String>,
    #[arg(long, default_value_t = 5)]
    pub k: usize,
    #[arg(long, value_enum, default_value_t = MetricArg::Cosine)]
    pub metric: MetricArg,
    /// CSV query,rank,neighbor,distance; stdout when omitted.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct TransferArgs {
    #[arg(long, env = "QSOR_INPUT")]
    pub input: PathBuf,
    #[arg(long, env = "QSOR_SPLIT")]
    pub split: PathBuf,
    /// Descriptors to hold out one at a time.
    #[arg(long, required = true)]
    pub held_out: Vec<String>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub trees: Option<usize>,
    /// Also train a network on every descriptor for reference.
    #[arg(long)]
    pub full_gnn: bool,
    #[arg(long, default_value_t = 1000)]
    pub resamples: usize,
    #[arg(long)]
    pub output: PathBuf,
    #[command(flatten)]
    pub features: FeatureArgs,
}

#[derive(Debug, Args, Serialize)]
pub struct ReportArgs {
    #[arg(long, env = "QSOR_INPUT")]
    pub input: PathBuf,
    /// Directory receiving the CSV/JSON tables.
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Embedding CSV for projection, density and distance correlation.
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    /// Evaluation report to flatten into a per-descriptor table.
    #[arg(long)]
    pub eval: Option<PathBuf>,
    /// Leave out the most frequent descriptors from the co-occurrence matrix.
    #[arg(long, default_value_t = 0)]
    pub drop_most_frequent: usize,
    #[arg(long, default_value_t = 2)]
    pub components: usize,
    /// Descriptors to draw densities for.
    #[arg(long, value_delimiter = ',')]
    pub kde_labels: Vec<String>,
    #[arg(long, default_value_t = 100)]
    pub grid: usize,
    /// Drop projected points beyond this many standard deviations.
    #[arg(long)]
    pub max_z: Option<f64>,
    #[arg(long, value_enum, default_value_t = MetricArg::Cosine)]
    pub metric: MetricArg,
}

#[derive(Debug, Args, Serialize)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 500)]
    pub n: usize,
    #[arg(long, default_value_t = 7)]
    pub labels: usize,
    #[arg(long)]
    pub output: PathBuf,
}
