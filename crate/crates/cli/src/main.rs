use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, CommandFactory, Parser, Subcommand, ValueEnum};
use serde::Serialize;

mod commands;
mod config;

/// Diverse beam decoding, N-best reranking and diversity-policy training.
#[derive(Parser)]
#[command(name = "divbeam", version)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand, Serialize)]
#[serde(rename_all = "kebab-case")]
enum Cmd {
    /// Train a fusion translation model (forward, or backward with --backward).
    TrainModel(TrainModelArgs),
    /// Train an n-gram language model on one side of a corpus.
    TrainLm(TrainLmArgs),
    /// Compute an idf table from one side of a corpus.
    Idf(IdfArgs),
    /// Beam-decode source lines into N-best JSON lines.
    Decode(DecodeArgs),
    /// Featurize N-best lists and print the top hypothesis per source.
    Rerank(RerankArgs),
    /// Tune reranking weights with MERT on featurized dev N-best lists.
    TuneWeights(TuneWeightsArgs),
    /// Train a policy that picks the diversity rate per source.
    TrainPolicy(TrainPolicyArgs),
    /// Score hypotheses: bleu, rouge2, distinct1 or distinct2.
    Eval(EvalArgs),
    /// Check beam search against exhaustive search on random models.
    OracleCheck(OracleCheckArgs),
}

#[derive(Args, Serialize, Clone)]
struct Common {
    /// TOML file with the same keys as the flags; flags win.
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum Format {
    Tsv,
    Jsonl,
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum Side {
    Source,
    Target,
}

#[derive(Args, Serialize, Clone)]
struct CorpusArgs {
    /// Parallel corpus, TSV (`source<TAB>target`) or JSON lines.
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, value_enum, default_value_t = Format::Tsv)]
    format: Format,
    #[arg(long)]
    lowercase: bool,
    /// Pairs tagged with this split are used; untagged pairs always are.
    #[arg(long, default_value = "train")]
    split: String,
}

#[derive(Args, Serialize)]
#[command(args_override_self = true)]
struct TrainModelArgs {
    #[command(flatten)]
    #[serde(flatten)]
    corpus: CorpusArgs,
    #[arg(long, default_value_t = 3)]
    order: usize,
    /// Weight of the target n-gram model in the mixture.
    #[arg(long, default_value_t = 0.5)]
    lambda: f64,
    #[arg(long, default_value_t = 0.1)]
    alpha: f64,
    /// Train p(source | target) instead.
    #[arg(long)]
    backward: bool,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    #[serde(flatten)]
    common: Common,
}

#[derive(Args, Serialize)]
#[command(args_override_self = true)]
struct TrainLmArgs {
    #[command(flatten)]
    #[serde(flatten)]
    corpus: CorpusArgs,
    #[arg(long, value_enum, default_value_t = Side::Target)]
    side: Side,
    #[arg(long, default_value_t = 3)]
    order: usize,
    #[arg(long, default_value_t = 0.1)]
    alpha: f64,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    #[serde(flatten)]
    common: Common,
}

#[derive(Args, Serialize)]
#[command(args_override_self = true)]
struct IdfArgs {
    #[command(flatten)]
    #[serde(flatten)]
    corpus: CorpusArgs,
    #[arg(long, value_enum, default_value_t = Side::Target)]
    side: Side,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    #[serde(flatten)]
    common: Common,
}

#[derive(Args, Serialize, Clone)]
struct SearchArgs {
    #[arg(long, default_value_t = 10)]
    beam: usize,
    /// Output length bounds relative to the source length.
    #[arg(long, default_value_t = 0.75)]
    min_ratio: f64,
    #[arg(long, default_value_t = 1.5)]
    max_ratio: f64,
    /// Absolute length bounds; override the ratios when both are given.
    #[arg(long, requires = "max_len")]
    min_len: Option<usize>,
    #[arg(long, requires = "min_len")]
    max_len: Option<usize>,
    /// Maximum N-best entries kept per source.
    #[arg(long, default_value_t = 100)]
    nbest: usize,
}

#[derive(Args, Serialize)]
#[command(args_override_self = true)]
struct DecodeArgs {
    #[arg(long)]
    model: PathBuf,
    /// Source text, one sentence per line.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    lowercase: bool,
    #[command(flatten)]
    #[serde(flatten)]
    search: SearchArgs,
    /// Sibling-rank penalty. 0 still runs the penalized selection code.
    #[arg(long, default_value_t = 0.0)]
    gamma: f64,
    /// Plain beam search selection (requires gamma 0).
    #[arg(long)]
    vanilla: bool,
    /// Trained policy choosing gamma per source (needs --source-lm).
    #[arg(long, requires = "source_lm", conflicts_with = "vanilla")]
    policy: Option<PathBuf>,
    #[arg(long)]
    source_lm: Option<PathBuf>,
    /// Worker threads; output does not depend on it.
    #[arg(long, default_value_t = 1)]
    batch: usize,
    /// Defaults to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    common: Common,
}

#[derive(Args, Serialize, Clone)]
struct FeatureModelArgs {
    /// Forward model (defines the source and target vocabularies).
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    backward: Option<PathBuf>,
    /// Target language model.
    #[arg(long)]
    lm: Option<PathBuf>,
    /// Enables the tf-idf feature.
    #[arg(long)]
    idf: Option<PathBuf>,
}

#[derive(Args, Serialize)]
#[command(args_override_self = true)]
#[command(group = clap::ArgGroup::new("records").required(true).args(["nbest", "features"]))]
struct RerankArgs {
    /// N-best JSON lines from `decode`; featurized with the models below.
    #[arg(long, requires_all = ["input", "model", "backward", "lm"])]
    nbest: Option<PathBuf>,
    /// Source text the N-best lists were decoded from.
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    lowercase: bool,
    #[command(flatten)]
    #[serde(flatten)]
    models: FeatureModelArgs,
    /// Already featurized records, instead of --nbest.
    #[arg(long)]
    features: Option<PathBuf>,
    /// Where to write the featurized records.
    #[arg(long)]
    features_out: Option<PathBuf>,
    /// Defaults to the forward model score alone.
    #[arg(long)]
    weights: Option<PathBuf>,
    /// Top hypothesis per source, one line each. Defaults to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    common: Common,
}

#[derive(Args, Serialize)]
#[command(args_override_self = true)]
struct TuneWeightsArgs {
    /// Featurized dev records from `rerank --features-out`.
    #[arg(long)]
    features: PathBuf,
    /// Reference text, line i for source i.
    #[arg(long)]
    references: PathBuf,
    #[arg(long)]
    lowercase: bool,
    /// Starting weights; defaults to the forward model score alone.
    #[arg(long)]
    init: Option<PathBuf>,
    #[arg(long, default_value_t = 8)]
    restarts: usize,
    #[arg(long, default_value_t = 20)]
    max_iters: usize,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    #[serde(flatten)]
    common: Common,
}

#[derive(Args, Serialize)]
#[command(args_override_self = true)]
struct TrainPolicyArgs {
    #[command(flatten)]
    #[serde(flatten)]
    corpus: CorpusArgs,
    /// Dev split used when re-tuning reranking weights.
    #[arg(long)]
    dev_split: Option<String>,
    /// Forward model.
    #[arg(long)]
    model: PathBuf,
    /// Source-side language model for the policy features.
    #[arg(long)]
    source_lm: PathBuf,
    /// Rerank each instance's N-best list (needs --lm).
    #[arg(long, requires = "lm")]
    backward: Option<PathBuf>,
    #[arg(long, requires = "backward")]
    lm: Option<PathBuf>,
    #[arg(long)]
    idf: Option<PathBuf>,
    /// Initial reranking weights.
    #[arg(long)]
    weights: Option<PathBuf>,
    /// Comma-separated gamma values; defaults to a regular grid.
    #[arg(long)]
    grid: Option<String>,
    #[arg(long, default_value_t = 20)]
    grid_steps: usize,
    #[arg(long, default_value_t = 1.0)]
    grid_max: f64,
    #[arg(long, default_value_t = 1000)]
    instances: usize,
    /// Re-tune reranking weights every this many instances; 0 never.
    #[arg(long, default_value_t = 0)]
    retune_every: usize,
    #[arg(long, default_value_t = 0.1)]
    lr_policy: f64,
    #[arg(long, default_value_t = 0.05)]
    lr_baseline: f64,
    #[arg(long, default_value_t = 8)]
    restarts: usize,
    #[arg(long, default_value_t = 20)]
    max_iters: usize,
    #[command(flatten)]
    #[serde(flatten)]
    search: SearchArgs,
    #[arg(long)]
    out: PathBuf,
    /// Per-instance reward records as JSON lines.
    #[arg(long)]
    log: Option<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    common: Common,
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum Metric {
    Bleu,
    Rouge2,
    Distinct1,
    Distinct2,
}

#[derive(Args, Serialize)]
#[command(args_override_self = true)]
struct EvalArgs {
    #[arg(value_enum)]
    metric: Metric,
    /// Hypotheses, one per line.
    #[arg(long)]
    hyp: PathBuf,
    /// References, one per line (bleu and rouge2).
    #[arg(long = "ref")]
    reference: Option<PathBuf>,
    #[arg(long)]
    lowercase: bool,
    #[command(flatten)]
    #[serde(flatten)]
    common: Common,
}

#[derive(Args, Serialize)]
#[command(args_override_self = true)]
struct OracleCheckArgs {
    /// Random models to generate.
    #[arg(long, default_value_t = 50)]
    models: usize,
    /// Vocabulary size including EOS.
    #[arg(long, default_value_t = 5)]
    vocab: usize,
    #[arg(long, default_value_t = 5)]
    maxlen: usize,
    #[command(flatten)]
    #[serde(flatten)]
    common: Common,
}

fn main() -> ExitCode {
    let args = match config::splice(&Cli::command(), std::env::args_os().collect()) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(2);
        }
    };
    let cli = Cli::parse_from(args);
    match commands::run(&cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
