use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use kglm_core::decode::DEFAULT_BEAM_WIDTH;
use kglm_core::embed::{CalibrateConfig, Metric, Pooling};
use kglm_core::kge::KgeConfig;
use kglm_core::model::ModelConfig;
use kglm_core::train::TrainConfig;

/// Architecture settings; the vocabulary size comes from the tokenizer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub d_model: usize,
    pub n_heads: usize,
    pub n_layers: usize,
    pub ffn_dim: usize,
    pub init_std: f64,
    pub tie_output: bool,
}

impl Default for ModelSection {
    fn default() -> Self {
        let m = ModelConfig::new(1);
        ModelSection {
            d_model: m.d_model,
            n_heads: m.n_heads,
            n_layers: m.n_layers,
            ffn_dim: m.ffn_dim,
            init_std: m.init_std,
            tie_output: m.tie_output,
        }
    }
}

impl ModelSection {
    pub fn to_config(&self, vocab_size: usize, max_len: usize, dropout: f64) -> ModelConfig {
        ModelConfig {
            vocab_size,
            d_model: self.d_model,
            n_heads: self.n_heads,
            n_layers: self.n_layers,
            ffn_dim: self.ffn_dim,
            max_len,
            dropout,
            tie_output: self.tie_output,
            init_std: self.init_std,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum DecodeMode {
    Beam,
    Exhaustive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecodeSection {
    pub k: usize,
    pub mode: DecodeMode,
}

impl Default for DecodeSection {
    fn default() -> Self {
        DecodeSection {
            k: DEFAULT_BEAM_WIDTH,
            mode: DecodeMode::Beam,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub filtered: bool,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection { filtered: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AlignSection {
    pub pooling: Pooling,
    pub metric: MetricName,
    pub csls_k: usize,
    /// Share of links used to fit the map; the rest are retrieval queries.
    pub train_fraction: f64,
    pub top_n: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum MetricName {
    Cosine,
    Csls,
}

impl From<MetricName> for Metric {
    fn from(m: MetricName) -> Self {
        match m {
            MetricName::Cosine => Metric::Cosine,
            MetricName::Csls => Metric::Csls,
        }
    }
}

impl Default for AlignSection {
    fn default() -> Self {
        AlignSection {
            pooling: Pooling::MeanOverTokens,
            metric: MetricName::Csls,
            csls_k: 10,
            train_fraction: 0.7,
            top_n: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TransferSection {
    pub n_entities: usize,
    pub n_relations: usize,
    pub eval_fraction: f64,
    pub seeds: Vec<u64>,
    pub control: bool,
}

impl Default for TransferSection {
    fn default() -> Self {
        TransferSection {
            n_entities: 60,
            n_relations: 4,
            eval_fraction: 0.3,
            seeds: vec![1, 2, 3],
            control: false,
        }
    }
}

/// Everything a run depends on besides its input files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Single source of randomness; copied into every section that draws.
    pub seed: u64,
    pub merges: usize,
    pub test_ratio: f64,
    pub model: ModelSection,
    pub train: TrainConfig,
    pub decode: DecodeSection,
    pub eval: EvalSection,
    pub calibrate: CalibrateConfig,
    pub kge: KgeConfig,
    pub align: AlignSection,
    pub transfer: TransferSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            merges: 200,
            test_ratio: 0.1,
            model: ModelSection::default(),
            train: TrainConfig::default(),
            decode: DecodeSection::default(),
            eval: EvalSection::default(),
            calibrate: CalibrateConfig::default(),
            kge: KgeConfig::default(),
            align: AlignSection::default(),
            transfer: TransferSection::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(RunConfig::default());
        };
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    /// Pushes the run seed into every seeded section.
    pub fn propagate_seed(&mut self) {
        self.train.seed = self.seed;
        self.calibrate.seed = self.seed;
        self.kge.seed = self.seed;
    }

    pub fn hash(&self) -> Result<String> {
        let json = serde_json::to_vec(self)?;
        Ok(hex::encode(Sha256::digest(&json)))
    }
}
