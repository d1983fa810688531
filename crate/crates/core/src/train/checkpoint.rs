//! Binary checkpoint container.
//!
//! Layout: magic `KGLMCKPT`, `u32` version, `u64` header length, JSON header,
//! raw little-endian `f64` tensors in header order, then the sha256 of all
//! preceding bytes.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{AdamState, TrainConfig};
use crate::error::{Error, Result};
use crate::model::{ModelConfig, ModelParams};

const MAGIC: &[u8; 8] = b"KGLMCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;
const DIGEST_LEN: usize = 32;

/// Enough to regenerate every random stream after `step`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: u64,
    pub step: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub tokenizer_hash: String,
    pub train_config: Option<TrainConfig>,
    pub step: u64,
    pub rng: RngState,
    pub adam: Option<AdamState>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    version: u32,
    model: ModelConfig,
    tokenizer_hash: String,
    train_config: Option<TrainConfig>,
    step: u64,
    rng: RngState,
    adam_t: Option<u64>,
    tensors: Vec<(String, usize)>,
}

fn push_tensors(buf: &mut Vec<u8>, p: &ModelParams) {
    p.for_each(|_, t| {
        for v in t {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    });
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let tensors = self
            .params
            .slices()
            .into_iter()
            .map(|(n, s)| (n, s.len()))
            .collect();
        let header = Header {
            version: CHECKPOINT_VERSION,
            model: self.params.config.clone(),
            tokenizer_hash: self.tokenizer_hash.clone(),
            train_config: self.train_config.clone(),
            step: self.step,
            rng: self.rng,
            adam_t: self.adam.as_ref().map(|a| a.t),
            tensors,
        };
        let json = serde_json::to_vec(&header)?;
        let n = self.params.num_params();
        let mut buf = Vec::with_capacity(24 + json.len() + 8 * n * 3 + DIGEST_LEN);
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        buf.extend_from_slice(&(json.len() as u64).to_le_bytes());
        buf.extend_from_slice(&json);
        push_tensors(&mut buf, &self.params);
        if let Some(a) = &self.adam {
            push_tensors(&mut buf, &a.m);
            push_tensors(&mut buf, &a.v);
        }
        let digest = Sha256::digest(&buf);
        buf.extend_from_slice(&digest);
        Ok(buf)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let corrupt = |m: &str| Error::Checkpoint(m.to_string());
        if bytes.len() < MAGIC.len() + 12 + DIGEST_LEN {
            return Err(corrupt("file too short; checksum cannot be verified"));
        }
        let (body, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
        if Sha256::digest(body).as_slice() != digest {
            return Err(corrupt("checksum mismatch (truncated or corrupt file)"));
        }
        if &body[..8] != MAGIC {
            return Err(corrupt("not a checkpoint file"));
        }
        let version = u32::from_le_bytes(body[8..12].try_into().expect("4 bytes"));
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint version {version}, expected {CHECKPOINT_VERSION}"
            )));
        }
        let hlen = u64::from_le_bytes(body[12..20].try_into().expect("8 bytes")) as usize;
        let hend = 20usize
            .checked_add(hlen)
            .filter(|&e| e <= body.len())
            .ok_or_else(|| corrupt("header length out of range"))?;
        let header: Header = serde_json::from_slice(&body[20..hend])?;
        let mut params = ModelParams::init(&header.model, 0)?;
        let layout: Vec<(String, usize)> = params
            .slices()
            .into_iter()
            .map(|(n, s)| (n, s.len()))
            .collect();
        if layout != header.tensors {
            return Err(corrupt("tensor layout does not match the model config"));
        }
        let mut cursor = &body[hend..];
        let mut fill = |p: &mut ModelParams| -> Result<()> {
            let mut short = false;
            p.for_each_mut(|_, t| {
                for v in t.iter_mut() {
                    if cursor.len() < 8 {
                        short = true;
                        return;
                    }
                    let (head, rest) = cursor.split_at(8);
                    *v = f64::from_le_bytes(head.try_into().expect("8 bytes"));
                    cursor = rest;
                }
            });
            if short {
                Err(corrupt("tensor data truncated"))
            } else {
                Ok(())
            }
        };
        fill(&mut params)?;
        let adam = match header.adam_t {
            Some(t) => {
                let mut a = AdamState::new(&params);
                a.t = t;
                fill(&mut a.m)?;
                fill(&mut a.v)?;
                Some(a)
            }
            None => None,
        };
        if !cursor.is_empty() {
            return Err(corrupt("trailing bytes after tensor data"));
        }
        Ok(Checkpoint {
            params,
            tokenizer_hash: header.tokenizer_hash,
            train_config: header.train_config,
            step: header.step,
            rng: header.rng,
            adam,
        })
    }

    /// sha256 of the serialized checkpoint.
    pub fn hash(&self) -> Result<String> {
        Ok(hex::encode(Sha256::digest(self.to_bytes()?)))
    }
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let bytes = ckpt.to_bytes()?;
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Loads and verifies a checkpoint. When `tokenizer_hash` is given it must
/// match the hash recorded at save time.
pub fn load_checkpoint(path: &Path, tokenizer_hash: Option<&str>) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
    let ckpt = Checkpoint::from_bytes(&bytes)?;
    if let Some(h) = tokenizer_hash {
        if h != ckpt.tokenizer_hash {
            return Err(Error::Checkpoint(format!(
                "tokenizer mismatch: checkpoint was trained with {}, got {h}",
                ckpt.tokenizer_hash
            )));
        }
    }
    Ok(ckpt)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(adam: bool) -> Checkpoint {
        let mut cfg = ModelConfig::new(11);
        cfg.d_model = 8;
        cfg.ffn_dim = 8;
        cfg.n_layers = 1;
        let params = ModelParams::init(&cfg, 5).unwrap();
        let adam = adam.then(|| {
            let mut a = AdamState::new(&params);
            a.t = 7;
            a.m.for_each_mut(|_, t| t.iter_mut().enumerate().for_each(|(i, v)| *v = i as f64));
            a
        });
        Checkpoint {
            params,
            tokenizer_hash: "abc".into(),
            train_config: Some(TrainConfig::default()),
            step: 42,
            rng: RngState { seed: 1, step: 42 },
            adam,
        }
    }

    #[test]
    fn round_trip() {
        for adam in [false, true] {
            let c = sample(adam);
            let back = Checkpoint::from_bytes(&c.to_bytes().unwrap()).unwrap();
            assert_eq!(back, c);
        }
    }

    #[test]
    fn truncation_is_detected() {
        let bytes = sample(true).to_bytes().unwrap();
        for cut in [1, 9, bytes.len() / 2, bytes.len() - 5] {
            let err = Checkpoint::from_bytes(&bytes[..bytes.len() - cut]).unwrap_err();
            assert!(matches!(err, Error::Checkpoint(_)), "{err}");
        }
    }

    #[test]
    fn bit_flip_is_detected() {
        let mut bytes = sample(false).to_bytes().unwrap();
        let i = bytes.len() / 2;
        bytes[i] ^= 1;
        assert!(Checkpoint::from_bytes(&bytes).unwrap_err().to_string().contains("checksum"));
    }

    #[test]
    fn version_mismatch() {
        let mut bytes = sample(false).to_bytes().unwrap();
        bytes[8..12].copy_from_slice(&99u32.to_le_bytes());
        let n = bytes.len() - DIGEST_LEN;
        let d = Sha256::digest(&bytes[..n]);
        bytes[n..].copy_from_slice(&d);
        assert!(Checkpoint::from_bytes(&bytes).unwrap_err().to_string().contains("version 99"));
    }

    #[test]
    fn tokenizer_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        save_checkpoint(&path, &sample(false)).unwrap();
        assert!(load_checkpoint(&path, Some("abc")).is_ok());
        let err = load_checkpoint(&path, Some("def")).unwrap_err();
        assert!(err.to_string().contains("tokenizer mismatch"));
    }
}
