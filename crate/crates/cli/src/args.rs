//! Command-line surface.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(
    name = "featsel",
    version,
    about = "Sequential, constraint-aware feature selection with a language-model (or mock) selector",
    long_about = None
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Validate a feature catalog (JSONL or CSV) and write it back as canonical JSONL.
    Ingest(IngestArgs),
    /// Run the two-phase selection pipeline over a catalog.
    Select(SelectArgs),
    /// Score selections from several methods on train/test data and write a report.
    Evaluate(EvaluateArgs),
    /// Build the candidate pool of signal pairs from a signal table.
    Pairs(PairsArgs),
    /// Re-render one or more report CSVs as markdown and CSV.
    Report(ReportArgs),
    /// Generate a synthetic corpus with planted informative features.
    Synth(SynthArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BackendArg {
    Remote,
    MockImportance,
    MockScripted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RequirementArg {
    GroupConsolidation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MetricArg {
    Auc,
    Ne,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    /// The sequential selection pipeline.
    Mofa,
    /// L1 logistic regression ranked by |coefficient|.
    Lasso,
    /// Seeded uniform sample.
    Random,
}

impl MethodArg {
    pub fn as_str(self) -> &'static str {
        match self {
            MethodArg::Mofa => "mofa",
            MethodArg::Lasso => "lasso",
            MethodArg::Random => "random",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CorrelationArg {
    Pearson,
    Spearman,
}

/// Flags shared by every command that may run the selection pipeline. Any of
/// them can also be given in the `--config` file; flags win.
#[derive(Args, Debug, Clone, Default)]
pub struct SelectionFlags {
    /// TOML settings file (flat key = value table; see README).
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Feature catalog (.jsonl or .csv).
    #[arg(long, value_name = "FILE")]
    pub catalog: Option<PathBuf>,
    /// Number of phase-1 buckets B.
    #[arg(long, value_name = "B")]
    pub buckets: Option<usize>,
    /// Multiplier on K/B giving the per-bucket target.
    #[arg(long, value_name = "F")]
    pub oversample_factor: Option<f64>,
    /// Maximum number of buckets processed concurrently.
    #[arg(long, value_name = "N")]
    pub workers: Option<usize>,
    /// Root seed; every random stream is derived from it.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Selector backend.
    #[arg(long, value_enum)]
    pub backend: Option<BackendArg>,
    /// Chat-completions endpoint URL for the remote backend.
    #[arg(long, value_name = "URL")]
    pub endpoint: Option<String>,
    /// Model name sent to the remote backend.
    #[arg(long)]
    pub model: Option<String>,
    /// Sampling temperature for the remote backend.
    #[arg(long)]
    pub temperature: Option<f64>,
    /// Environment variable holding the remote backend's bearer token.
    #[arg(long, value_name = "NAME")]
    pub api_key_env: Option<String>,
    /// Abort once this many backend calls have been made.
    #[arg(long, value_name = "N")]
    pub max_requests: Option<u64>,
    /// Reply file for the scripted backend (one reply per line).
    #[arg(long, value_name = "FILE")]
    pub script: Option<PathBuf>,
    /// Metadata key the mock-importance backend ranks by.
    #[arg(long, value_name = "KEY")]
    pub importance_key: Option<String>,
    /// Prompt template file with {objective}, {requirements}, {selected}, {candidates}, {format_instruction}.
    #[arg(long, value_name = "FILE")]
    pub template: Option<PathBuf>,
    /// Task and objective text shown to the selector.
    #[arg(long, value_name = "TEXT")]
    pub objective: Option<String>,
    /// Built-in auxiliary requirements (comma separated).
    #[arg(long, value_enum, value_delimiter = ',')]
    pub requirements: Vec<RequirementArg>,
    /// Additional free-text requirement (repeatable).
    #[arg(long = "requirement-text", value_name = "TEXT")]
    pub requirement_texts: Vec<String>,
    /// Truncate feature descriptions in prompts to this many characters.
    #[arg(long, value_name = "N")]
    pub max_desc_chars: Option<usize>,
}

#[derive(Args, Debug)]
pub struct IngestArgs {
    /// Feature catalog to validate (.jsonl or .csv).
    #[arg(long, value_name = "FILE")]
    pub catalog: PathBuf,
    /// Output directory.
    #[arg(long, value_name = "DIR", default_value = "out")]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct SelectArgs {
    #[command(flatten)]
    pub selection: SelectionFlags,
    /// Number of features to select.
    #[arg(long)]
    pub k: Option<usize>,
    /// Keep raw backend replies in trace.jsonl.
    #[arg(long)]
    pub verbose_trace: bool,
    /// Output directory.
    #[arg(long, value_name = "DIR", default_value = "out")]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub selection: SelectionFlags,
    /// Budgets to evaluate (comma separated or repeated).
    #[arg(long, value_delimiter = ',', required = true)]
    pub k: Vec<usize>,
    /// Training CSV (feature columns plus the label column).
    #[arg(long, value_name = "FILE")]
    pub train: PathBuf,
    /// Test CSV with the same columns.
    #[arg(long, value_name = "FILE")]
    pub test: PathBuf,
    /// Name of the 0/1 label column.
    #[arg(long, value_name = "NAME", default_value = "label")]
    pub label_column: String,
    /// Methods to compare.
    #[arg(long, value_enum, value_delimiter = ',', default_value = "mofa,lasso,random")]
    pub methods: Vec<MethodArg>,
    /// Downstream metric.
    #[arg(long, value_enum, default_value = "auc")]
    pub metric: MetricArg,
    /// Inverse regularization strength of the Lasso baseline.
    #[arg(long, value_name = "C", default_value_t = 0.1)]
    pub lasso_c: f64,
    /// Use this selected.json for the mofa method instead of running selection.
    #[arg(long, value_name = "FILE")]
    pub selected: Option<PathBuf>,
    /// Task label used in the report.
    #[arg(long, default_value = "task")]
    pub task: String,
    /// Output directory.
    #[arg(long, value_name = "DIR", default_value = "out")]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct PairsArgs {
    /// Signal table CSV; columns prefixed outcome_ are outcomes.
    #[arg(long, value_name = "FILE")]
    pub signals: PathBuf,
    /// Correlation estimator for the pair metadata.
    #[arg(long, value_enum, default_value = "pearson")]
    pub correlation: CorrelationArg,
    /// Output directory.
    #[arg(long, value_name = "DIR", default_value = "out")]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct ReportArgs {
    /// Report CSV written by `evaluate` (repeatable; rows are merged).
    #[arg(long, value_name = "FILE", required = true)]
    pub input: Vec<PathBuf>,
    /// Output directory.
    #[arg(long, value_name = "DIR", default_value = "out")]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// Total number of features.
    #[arg(long, default_value_t = 200)]
    pub features: usize,
    /// Number of informative features.
    #[arg(long, default_value_t = 10)]
    pub informative: usize,
    /// Number of feature groups.
    #[arg(long, default_value_t = 4)]
    pub groups: usize,
    /// Training rows.
    #[arg(long, default_value_t = 5000)]
    pub train_rows: usize,
    /// Test rows.
    #[arg(long, default_value_t = 2000)]
    pub test_rows: usize,
    /// Standard deviation of the label noise on the logit.
    #[arg(long, default_value_t = 0.5)]
    pub noise: f64,
    /// Root seed.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory.
    #[arg(long, value_name = "DIR", default_value = "out")]
    pub out: PathBuf,
}
