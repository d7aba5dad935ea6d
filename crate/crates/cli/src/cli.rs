use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use wlclass_core::classifiers::ModelFamily;
use wlclass_core::windowing::{WindowKind, DEFAULT_WINDOW};

#[derive(Debug, Parser)]
#[command(
    name = "wlclass",
    version,
    about = "GPU workload classification from telemetry windows",
    args_override_self = true
)]
pub struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true, env = "WLCLASS_THREADS")]
    pub threads: Option<usize>,
    /// File of `key = value` lines supplying flag values; flags on the
    /// command line win. `[subcommand]` headers scope the keys below them.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Where to write the run manifest (default: next to the main output).
    #[arg(long, global = true, value_name = "FILE")]
    pub manifest_out: Option<PathBuf>,
    /// Log filter, e.g. `info` or `wlclass_core=debug`.
    #[arg(long, global = true, default_value = "warn")]
    pub log_level: String,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate synthetic labelled telemetry.
    #[command(args_override_self = true)]
    Synth(SynthArgs),
    /// Cut fixed-length windows from raw telemetry and split train/test.
    #[command(args_override_self = true)]
    Window(WindowArgs),
    /// Standardize an archive and reduce every trial to a feature row.
    #[command(args_override_self = true)]
    Featurize(FeaturizeArgs),
    /// Train a classifier.
    #[command(args_override_self = true)]
    Train(TrainArgs),
    /// Predict labels with a trained model.
    #[command(args_override_self = true)]
    Predict(PredictArgs),
    /// Cross-validated grid search, then refit on the full training split.
    #[command(args_override_self = true)]
    Gridsearch(GridsearchArgs),
    /// Score a model on labelled test data.
    #[command(args_override_self = true)]
    Evaluate(EvaluateArgs),
    /// Rebuild the published accuracy table from the challenge archives.
    #[command(args_override_self = true)]
    Reproduce(ReproduceArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Synth(_) => "synth",
            Command::Window(_) => "window",
            Command::Featurize(_) => "featurize",
            Command::Train(_) => "train",
            Command::Predict(_) => "predict",
            Command::Gridsearch(_) => "gridsearch",
            Command::Evaluate(_) => "evaluate",
            Command::Reproduce(_) => "reproduce",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FamilyArg {
    Rf,
    Svm,
    Gbt,
}

impl From<FamilyArg> for ModelFamily {
    fn from(f: FamilyArg) -> Self {
        match f {
            FamilyArg::Rf => ModelFamily::Rf,
            FamilyArg::Svm => ModelFamily::Svm,
            FamilyArg::Gbt => ModelFamily::Gbt,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PolicyArg {
    Start,
    Middle,
    Random,
}

impl From<PolicyArg> for WindowKind {
    fn from(p: PolicyArg) -> Self {
        match p {
            PolicyArg::Start => WindowKind::Start,
            PolicyArg::Middle => WindowKind::Middle,
            PolicyArg::Random => WindowKind::Random,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ReductionArg {
    Cov,
    Pca,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum KernelArg {
    Rbf,
    Linear,
}

#[derive(Debug, Clone, Args)]
pub struct SplitArgs {
    /// Window selection policy.
    #[arg(long, value_enum, default_value = "middle")]
    pub policy: PolicyArg,
    /// Samples per window.
    #[arg(long, default_value_t = DEFAULT_WINDOW)]
    pub length: usize,
    /// Fraction of each class's jobs placed in the training split.
    #[arg(long, default_value_t = 0.8)]
    pub split: f64,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// 4 (one class from each of four families) or 26 (full taxonomy).
    #[arg(long, default_value_t = 4, value_parser = clap::builder::ValueParser::new(clap::builder::TypedValueParser::try_map(clap::builder::PossibleValuesParser::new(["4", "26"]), |s| s.parse::<u8>())))]
    pub classes: u8,
    /// Job-count multiplier.
    #[arg(long, default_value_t = 1.0)]
    pub scale: f64,
    /// Weight of independent sensor noise.
    #[arg(long, default_value_t = 0.3)]
    pub noise: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Leading samples of class-independent warm-up activity per trial.
    #[arg(long, default_value_t = 0)]
    pub warmup: usize,
    #[arg(long)]
    pub min_length: Option<usize>,
    #[arg(long)]
    pub max_length: Option<usize>,
    /// Write a windowed challenge archive instead of raw CSV.
    #[arg(long)]
    pub emit_archive: bool,
    #[command(flatten)]
    pub split: SplitArgs,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct WindowArgs {
    /// Raw telemetry CSV.
    #[arg(long)]
    pub input: PathBuf,
    #[command(flatten)]
    pub split: SplitArgs,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Ignore columns outside the sensor schema.
    #[arg(long)]
    pub allow_extra_columns: bool,
    /// Carry the last finite reading forward instead of dropping rows.
    #[arg(long)]
    pub forward_fill: bool,
    /// Output archive path.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct ReductionArgs {
    #[arg(long, value_enum, default_value = "cov")]
    pub reduction: ReductionArg,
    /// Principal components kept by `--reduction pca`.
    #[arg(long, default_value_t = 28)]
    pub pca_k: usize,
    /// Subtract each trial's own sensor means before the Gram product.
    #[arg(long)]
    pub center_per_trial: bool,
    /// Divide the Gram product by samples − 1.
    #[arg(long)]
    pub unbiased_scale: bool,
}

#[derive(Debug, Args)]
pub struct FeaturizeArgs {
    /// Challenge archive.
    #[arg(long)]
    pub input: PathBuf,
    #[command(flatten)]
    pub reduction: ReductionArgs,
    /// Output prefix: writes PREFIX.train.csv, PREFIX.test.csv, PREFIX.meta.json.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct ModelArgs {
    #[arg(long, value_enum)]
    pub model: FamilyArg,
    /// Forest: number of trees.
    #[arg(long)]
    pub n_trees: Option<usize>,
    /// Forest or boosting: maximum tree depth.
    #[arg(long)]
    pub max_depth: Option<usize>,
    /// Forest: minimum rows per leaf.
    #[arg(long)]
    pub min_leaf: Option<usize>,
    /// Forest: features tried per split (default √d).
    #[arg(long)]
    pub max_features: Option<usize>,
    /// SVM: regularization C.
    #[arg(long)]
    pub c: Option<f64>,
    /// SVM kernel.
    #[arg(long, value_enum)]
    pub kernel: Option<KernelArg>,
    /// SVM: RBF width (default 1 / (d · var(X))).
    #[arg(long)]
    pub kernel_gamma: Option<f64>,
    /// SVM: stopping tolerance.
    #[arg(long)]
    pub tol: Option<f64>,
    /// SVM: iteration cap; hitting it exits with status 3.
    #[arg(long)]
    pub max_iter: Option<usize>,
    /// Boosting rounds.
    #[arg(long)]
    pub rounds: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    /// Boosting: minimum loss reduction per split (`inf` allowed).
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Boosting: ℓ1 leaf penalty.
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Boosting: ℓ2 leaf penalty.
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub min_child_weight: Option<f64>,
}

#[derive(Debug, Clone, Args)]
#[group(required = true, multiple = false)]
pub struct InputArgs {
    /// Feature CSV written by `featurize`.
    #[arg(long)]
    pub features: Option<PathBuf>,
    /// Challenge archive (features computed with the model's own pipeline,
    /// or with `--reduction` when training).
    #[arg(long)]
    pub archive: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub reduction: ReductionArgs,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Model file to write.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub model_path: PathBuf,
    #[command(flatten)]
    pub input: InputArgs,
    /// Labels CSV to write.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct GridsearchArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Challenge archive; the training split is cross-validated.
    #[arg(long)]
    pub archive: PathBuf,
    /// Reductions to search, e.g. `cov,pca:28,pca:64`.
    #[arg(long, default_value = "cov", value_delimiter = ',')]
    pub reductions: Vec<String>,
    /// Hyperparameter values, e.g. `n_trees=50,100,250`; repeatable.
    /// Defaults to the family's baseline grid.
    #[arg(long)]
    pub grid: Vec<String>,
    /// Fold count (default 10 for rf/svm, 5 for gbt).
    #[arg(long)]
    pub folds: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Refit model file to write; cell results go to OUT.cv.jsonl.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub model_path: PathBuf,
    #[command(flatten)]
    pub input: InputArgs,
    /// Report file (JSON lines); the table always goes to stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReproduceArgs {
    /// Model families to run (default: all).
    #[arg(long, value_enum, value_delimiter = ',')]
    pub family: Vec<FamilyArg>,
    /// Lines of `dataset-name = archive-path`.
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub folds: Option<usize>,
    #[arg(long, value_delimiter = ',', default_values_t = [28usize, 64, 256, 512])]
    pub pca_ks: Vec<usize>,
    /// Report file (JSON lines).
    #[arg(long)]
    pub out: Option<PathBuf>,
}
