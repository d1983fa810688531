use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

use kglm_core::kg::{build_vocab, parse_xlinks, KgVocab, LpSplit, XLink};
use kglm_core::tokenizer::Tokenizer;
use kglm_core::train::{load_checkpoint, Checkpoint};

use crate::config::RunConfig;

pub const TRAIN_FILE: &str = "train.tsv";
pub const TEST_FILE: &str = "test.tsv";
pub const XLINK_FILE: &str = "xlinks.tsv";
pub const MANIFEST_FILE: &str = "manifest.json";

/// A directory written by `ingest`.
pub struct Dataset {
    pub split: LpSplit,
    pub xlinks: Vec<XLink>,
    pub vocab: KgVocab,
}

impl Dataset {
    pub fn load(dir: &Path) -> Result<Self> {
        if !dir.is_dir() {
            bail!(kglm_core::Error::Validation(format!("data directory {} does not exist", dir.display())));
        }
        let split = LpSplit::load(dir).with_context(|| format!("loading split from {}", dir.display()))?;
        let xpath = dir.join(XLINK_FILE);
        let xlinks = if xpath.exists() {
            parse_xlinks(&xpath)?.to_vec()
        } else {
            Vec::new()
        };
        let vocab = build_vocab(split.all_triples(), &xlinks);
        Ok(Dataset { split, xlinks, vocab })
    }

    pub fn input_files(&self, dir: &Path) -> Vec<PathBuf> {
        [TRAIN_FILE, TEST_FILE, "split.json", XLINK_FILE]
            .iter()
            .map(|f| dir.join(f))
            .filter(|p| p.exists())
            .collect()
    }
}

pub fn load_tokenizer(path: &Path) -> Result<Tokenizer> {
    Tokenizer::load(path).with_context(|| format!("loading tokenizer {}", path.display()))
}

/// Loads a checkpoint and checks it against `tok`.
pub fn load_model(path: &Path, tok: &Tokenizer) -> Result<Checkpoint> {
    let ckpt = load_checkpoint(path, Some(&tok.hash())).with_context(|| format!("loading checkpoint {}", path.display()))?;
    if ckpt.params.config.vocab_size != tok.vocab_size() {
        bail!(kglm_core::Error::Checkpoint(format!(
            "checkpoint vocabulary {} differs from tokenizer vocabulary {}",
            ckpt.params.config.vocab_size,
            tok.vocab_size()
        )));
    }
    Ok(ckpt)
}

pub fn file_sha256(path: &Path) -> Result<String> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

#[derive(Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    command: &'a str,
    seed: u64,
    config_hash: String,
    config: &'a RunConfig,
    inputs: BTreeMap<String, String>,
    outputs: BTreeMap<String, String>,
}

/// Output files buffered in memory and written only when the command has
/// succeeded, so a failing run leaves no partial report behind.
pub struct Outputs {
    dir: PathBuf,
    files: BTreeMap<String, Vec<u8>>,
    inputs: BTreeMap<String, String>,
}

impl Outputs {
    pub fn new(dir: &Path) -> Self {
        Outputs {
            dir: dir.to_owned(),
            files: BTreeMap::new(),
            inputs: BTreeMap::new(),
        }
    }

    pub fn add(&mut self, name: &str, bytes: impl Into<Vec<u8>>) {
        self.files.insert(name.to_string(), bytes.into());
    }

    pub fn add_json(&mut self, name: &str, value: &impl Serialize) -> Result<()> {
        let mut s = serde_json::to_string_pretty(value)?;
        s.push('\n');
        self.add(name, s);
        Ok(())
    }

    pub fn input(&mut self, path: &Path) -> Result<()> {
        let h = file_sha256(path)?;
        self.inputs.insert(path.display().to_string(), h);
        Ok(())
    }

    /// Writes every file plus the manifest, each through a temporary name.
    pub fn commit(mut self, command: &str, cfg: &RunConfig) -> Result<Vec<PathBuf>> {
        let outputs = self
            .files
            .iter()
            .map(|(n, b)| (n.clone(), hex::encode(Sha256::digest(b))))
            .collect();
        let manifest = Manifest {
            tool: "kglm",
            version: env!("CARGO_PKG_VERSION"),
            command,
            seed: cfg.seed,
            config_hash: cfg.hash()?,
            config: cfg,
            inputs: std::mem::take(&mut self.inputs),
            outputs,
        };
        let mut m = serde_json::to_string_pretty(&manifest)?;
        m.push('\n');
        self.files.insert(MANIFEST_FILE.into(), m.into_bytes());
        fs::create_dir_all(&self.dir).with_context(|| format!("creating {}", self.dir.display()))?;
        let mut written = Vec::new();
        for (name, bytes) in &self.files {
            let path = self.dir.join(name);
            let tmp = self.dir.join(format!(".{name}.tmp"));
            fs::write(&tmp, bytes).with_context(|| format!("writing {}", tmp.display()))?;
            fs::rename(&tmp, &path)?;
            written.push(path);
        }
        Ok(written)
    }
}
