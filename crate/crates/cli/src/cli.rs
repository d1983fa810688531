use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use kglm_core::embed::Pooling;
use kglm_core::model::MaskMode;

use crate::config::{DecodeMode, MetricName, RunConfig};

#[derive(Debug, Parser)]
#[command(name = "kglm", version, about = "Language models over multilingual knowledge-graph facts")]
pub struct Cli {
    /// TOML run configuration; command-line flags take precedence.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Worker threads for parallel gradient and evaluation work.
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    /// Seed for every random stream of the run.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Log progress to stderr (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Parse triple and link files, deduplicate and write a train/test split.
    Ingest(IngestArgs),
    /// Train a BPE tokenizer over every surface string of a dataset.
    Tokenize(TokenizeArgs),
    /// Train the language model on a dataset.
    Train(TrainArgs),
    /// Rank candidate objects for one query or a batch of queries.
    Predict(PredictArgs),
    /// Filtered link-prediction evaluation on the test split.
    EvalLp(EvalArgs),
    /// Contrastive calibration of the embedding space.
    Calibrate(CalibrateArgs),
    /// Embed entities and fit an orthogonal map between two languages.
    Align(AlignArgs),
    /// Nearest-neighbour retrieval over an embedding file.
    Retrieve(RetrieveArgs),
    /// Train and evaluate TransE, ComplEx and RotatE.
    Baseline(BaselineArgs),
    /// Transfer experiment on synthetic bilingual data: both languages with links against one language alone.
    TransferExp(TransferArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Ingest(_) => "ingest",
            Command::Tokenize(_) => "tokenize",
            Command::Train(_) => "train",
            Command::Predict(_) => "predict",
            Command::EvalLp(_) => "eval-lp",
            Command::Calibrate(_) => "calibrate",
            Command::Align(_) => "align",
            Command::Retrieve(_) => "retrieve",
            Command::Baseline(_) => "baseline",
            Command::TransferExp(_) => "transfer-exp",
        }
    }

    /// Applies flag overrides on top of the file configuration.
    pub fn apply(&self, cfg: &mut RunConfig) {
        match self {
            Command::Ingest(a) => set(&mut cfg.test_ratio, a.test_ratio),
            Command::Tokenize(a) => set(&mut cfg.merges, a.merges),
            Command::Train(a) => a.overrides.apply(cfg),
            Command::Predict(a) => a.decode.apply(cfg),
            Command::EvalLp(a) => {
                a.decode.apply(cfg);
                if a.unfiltered {
                    cfg.eval.filtered = false;
                }
            }
            Command::Calibrate(a) => {
                set(&mut cfg.calibrate.batch_size, a.batch_size);
                set(&mut cfg.calibrate.epochs, a.epochs);
                set(&mut cfg.calibrate.lr, a.lr);
                set(&mut cfg.calibrate.pooling, a.pooling);
            }
            Command::Align(a) => {
                set(&mut cfg.align.pooling, a.pooling);
                set(&mut cfg.align.metric, a.metric);
                set(&mut cfg.align.train_fraction, a.train_fraction);
            }
            Command::Retrieve(a) => {
                set(&mut cfg.align.metric, a.metric);
                set(&mut cfg.align.top_n, a.top);
                set(&mut cfg.align.csls_k, a.csls_k);
            }
            Command::Baseline(a) => {
                set(&mut cfg.kge.dim, a.dim);
                set(&mut cfg.kge.epochs, a.epochs);
                if a.unfiltered {
                    cfg.eval.filtered = false;
                }
            }
            Command::TransferExp(a) => {
                if let Some(s) = &a.seeds {
                    cfg.transfer.seeds = s.clone();
                }
                if a.control {
                    cfg.transfer.control = true;
                }
                set(&mut cfg.transfer.n_entities, a.n_entities);
                set(&mut cfg.train.epochs, a.epochs);
                set(&mut cfg.decode.k, a.k);
            }
        }
    }
}

fn set<T>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}

fn parse_mask(s: &str) -> Result<MaskMode, String> {
    s.parse()
}

fn parse_pooling(s: &str) -> Result<Pooling, String> {
    s.parse()
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// Triple files (`lang \t subject \t relation \t object`).
    #[arg(long, required = true, num_args = 1..)]
    pub triples: Vec<PathBuf>,
    /// Cross-lingual link files (`lang_a \t entity_a \t lang_b \t entity_b`).
    #[arg(long, num_args = 1..)]
    pub xlinks: Vec<PathBuf>,
    #[arg(long)]
    pub test_ratio: Option<f64>,
    /// Use these triples as the test split instead of sampling one.
    #[arg(long, conflicts_with = "test_ratio")]
    pub test: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TokenizeArgs {
    /// Directory written by `ingest`.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub merges: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainOverrides {
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub dropout: Option<f64>,
    #[arg(long, value_parser = parse_mask)]
    pub mask_mode: Option<MaskMode>,
    /// Merges for the tokenizer trained when `--tokenizer` is absent.
    #[arg(long)]
    pub merges: Option<usize>,
    #[arg(long)]
    pub d_model: Option<usize>,
    #[arg(long)]
    pub n_layers: Option<usize>,
    #[arg(long)]
    pub n_heads: Option<usize>,
    #[arg(long)]
    pub ffn_dim: Option<usize>,
    #[arg(long)]
    pub checkpoint_every: Option<u64>,
    /// Train on triples only.
    #[arg(long)]
    pub no_xlinks: bool,
}

impl TrainOverrides {
    fn apply(&self, cfg: &mut RunConfig) {
        set(&mut cfg.train.epochs, self.epochs);
        set(&mut cfg.train.batch_size, self.batch_size);
        set(&mut cfg.train.base_lr, self.lr);
        set(&mut cfg.train.dropout, self.dropout);
        set(&mut cfg.train.mask_mode, self.mask_mode);
        set(&mut cfg.train.checkpoint_every, self.checkpoint_every);
        set(&mut cfg.merges, self.merges);
        set(&mut cfg.model.d_model, self.d_model);
        set(&mut cfg.model.n_layers, self.n_layers);
        set(&mut cfg.model.n_heads, self.n_heads);
        set(&mut cfg.model.ffn_dim, self.ffn_dim);
        if self.no_xlinks {
            cfg.train.use_xlinks = false;
        }
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Existing tokenizer; one is trained from the data when absent.
    #[arg(long)]
    pub tokenizer: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub overrides: TrainOverrides,
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Defaults to `tokenizer.txt` next to the checkpoint.
    #[arg(long)]
    pub tokenizer: Option<PathBuf>,
}

impl ModelArgs {
    pub fn tokenizer_path(&self) -> PathBuf {
        self.tokenizer.clone().unwrap_or_else(|| {
            self.checkpoint
                .parent()
                .unwrap_or_else(|| std::path::Path::new("."))
                .join(crate::commands::TOKENIZER_FILE)
        })
    }
}

#[derive(Debug, Args)]
pub struct DecodeOverrides {
    /// Beam width.
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long, value_enum)]
    pub mode: Option<DecodeMode>,
    #[arg(long, value_parser = parse_mask)]
    pub mask_mode: Option<MaskMode>,
}

impl DecodeOverrides {
    fn apply(&self, cfg: &mut RunConfig) {
        set(&mut cfg.decode.k, self.k);
        set(&mut cfg.decode.mode, self.mode);
        set(&mut cfg.train.mask_mode, self.mask_mode);
    }
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Dataset whose entity inventory supplies the candidates.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub subject: Option<String>,
    #[arg(long)]
    pub relation: Option<String>,
    /// Predict the counterpart of the subject in this language.
    #[arg(long)]
    pub target_lang: Option<String>,
    #[arg(long)]
    pub lang: Option<String>,
    /// Query file of `lang \t subject \t relation` lines.
    #[arg(long)]
    pub batch: Option<PathBuf>,
    /// Number of ranked entities printed per query.
    #[arg(long, default_value_t = 10)]
    pub top: usize,
    /// Also write predictions and a manifest here.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub decode: DecodeOverrides,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Rank against the full entity inventory.
    #[arg(long)]
    pub unfiltered: bool,
    #[command(flatten)]
    pub decode: DecodeOverrides,
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long, value_parser = parse_pooling)]
    pub pooling: Option<Pooling>,
}

#[derive(Debug, Args)]
pub struct AlignArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub src_lang: String,
    #[arg(long)]
    pub tgt_lang: String,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_parser = parse_pooling)]
    pub pooling: Option<Pooling>,
    #[arg(long, value_enum)]
    pub metric: Option<MetricName>,
    #[arg(long)]
    pub train_fraction: Option<f64>,
}

#[derive(Debug, Args)]
pub struct RetrieveArgs {
    /// Embedding file written by `align`.
    #[arg(long)]
    pub embeddings: PathBuf,
    /// Map applied to the queries before retrieval.
    #[arg(long)]
    pub map: Option<PathBuf>,
    #[arg(long)]
    pub src_lang: String,
    #[arg(long)]
    pub tgt_lang: String,
    /// Source-language entity to look up; may be repeated.
    #[arg(long)]
    pub query: Vec<String>,
    /// Link file of gold pairs; reports top-1 accuracy.
    #[arg(long)]
    pub pairs: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum)]
    pub metric: Option<MetricName>,
    #[arg(long)]
    pub top: Option<usize>,
    #[arg(long)]
    pub csls_k: Option<usize>,
}

#[derive(Debug, Args)]
pub struct BaselineArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// transe, complex or rotate; all three when absent.
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub unfiltered: bool,
}

#[derive(Debug, Args)]
pub struct TransferArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    /// Train both conditions on all language-B facts.
    #[arg(long)]
    pub control: bool,
    #[arg(long)]
    pub n_entities: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub k: Option<usize>,
}
