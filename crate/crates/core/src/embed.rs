//! Entity embeddings from the language model, contrastive calibration,
//! orthogonal alignment and nearest-neighbour retrieval.

use std::cmp::Ordering;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use nalgebra::DMatrix;
use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{backward, forward_hidden, AttentionMask, Dropout, ForwardCache, ModelParams};
use crate::seed;
use crate::tokenizer::{Special, TokenId, Tokenizer};
use crate::train::{adam_step, clip_grad_norm, AdamHyper, AdamState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pooling {
    /// Mean of the hidden rows of the surface-string subtokens.
    #[default]
    MeanOverTokens,
    /// Hidden row of the first surface-string subtoken.
    FirstPosition,
}

impl Pooling {
    pub fn name(self) -> &'static str {
        match self {
            Pooling::MeanOverTokens => "mean_over_tokens",
            Pooling::FirstPosition => "first_position",
        }
    }
}

impl FromStr for Pooling {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "mean_over_tokens" | "mean" => Ok(Pooling::MeanOverTokens),
            "first_position" | "first" => Ok(Pooling::FirstPosition),
            other => Err(format!("unknown pooling {other:?}")),
        }
    }
}

const CONTENT_START: usize = 2;

/// `<s> [S] X </s>`; returns ids and the content row range.
fn entity_sequence(tok: &Tokenizer, surface: &str, max_len: usize) -> Result<(Vec<TokenId>, std::ops::Range<usize>)> {
    let content = tok.encode(surface);
    if content.is_empty() {
        return Err(Error::InvalidArgument(format!("{surface:?} encodes to no tokens")));
    }
    let mut ids = Vec::with_capacity(content.len() + 3);
    ids.push(Special::Bos.id());
    ids.push(Special::Subject.id());
    ids.extend_from_slice(&content);
    ids.push(Special::Sep.id());
    if ids.len() > max_len {
        return Err(Error::TooLong {
            len: ids.len(),
            max: max_len,
        });
    }
    Ok((ids, CONTENT_START..CONTENT_START + content.len()))
}

fn pool(hidden: ArrayView2<'_, f64>, rows: std::ops::Range<usize>, pooling: Pooling) -> Array1<f64> {
    match pooling {
        Pooling::MeanOverTokens => hidden
            .slice(s![rows, ..])
            .mean_axis(Axis(0))
            .expect("non-empty content"),
        Pooling::FirstPosition => hidden.row(rows.start).to_owned(),
    }
}

/// Embedding of `surface` with full self-attention and no dropout.
pub fn embed_entity(params: &ModelParams, tok: &Tokenizer, surface: &str, pooling: Pooling) -> Result<Array1<f64>> {
    let (ids, rows) = entity_sequence(tok, surface, params.config.max_len)?;
    let (hidden, _) = forward_hidden(params, &ids, &AttentionMask::full(ids.len()), Dropout::Off)?;
    Ok(pool(hidden.view(), rows, pooling))
}

pub fn embed_all(params: &ModelParams, tok: &Tokenizer, surfaces: &[String], pooling: Pooling) -> Result<Array2<f64>> {
    let rows: Vec<Array1<f64>> = surfaces
        .par_iter()
        .map(|s| embed_entity(params, tok, s, pooling))
        .collect::<Result<_>>()?;
    let d = params.config.d_model;
    let mut out = Array2::zeros((rows.len(), d));
    for (mut r, v) in out.rows_mut().into_iter().zip(rows) {
        r.assign(&v);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CalibrateConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub temperature: f64,
    pub lr: f64,
    pub dropout: f64,
    pub pooling: Pooling,
    pub seed: u64,
    pub clip_norm: f64,
}

impl Default for CalibrateConfig {
    fn default() -> Self {
        CalibrateConfig {
            epochs: 1,
            batch_size: 128,
            temperature: 0.04,
            lr: 1e-4,
            dropout: 0.1,
            pooling: Pooling::MeanOverTokens,
            seed: 0,
            clip_norm: 1.0,
        }
    }
}

struct View {
    cache: ForwardCache,
    hidden: Array2<f64>,
    rows: std::ops::Range<usize>,
    z: Array1<f64>,
}

fn encode_view(params: &ModelParams, tok: &Tokenizer, s: &str, pooling: Pooling, dseed: Option<u64>) -> Result<View> {
    let (ids, rows) = entity_sequence(tok, s, params.config.max_len)?;
    let mut rng = dseed.map(ChaCha8Rng::seed_from_u64);
    let dropout = match rng.as_mut() {
        Some(r) => Dropout::On(r),
        None => Dropout::Off,
    };
    let (hidden, cache) = forward_hidden(params, &ids, &AttentionMask::full(ids.len()), dropout)?;
    let z = pool(hidden.view(), rows.clone(), pooling);
    Ok(View { cache, hidden, rows, z })
}

/// Symmetric InfoNCE between two views and its gradient w.r.t. the pooled
/// vectors. Row `i` of `a` and `b` are positives.
pub fn infonce_with_grad(a: &Array2<f64>, b: &Array2<f64>, temperature: f64) -> Result<(f64, Array2<f64>, Array2<f64>)> {
    let n = a.nrows();
    let norms = |m: &Array2<f64>| -> Result<Array1<f64>> {
        let v = m.map_axis(Axis(1), |r| r.dot(&r).sqrt());
        if v.iter().any(|&x| x == 0.0 || !x.is_finite()) {
            return Err(Error::Numeric("zero or non-finite embedding in contrastive batch".into()));
        }
        Ok(v)
    };
    let (na, nb) = (norms(a)?, norms(b)?);
    let ua = a / &na.view().insert_axis(Axis(1));
    let ub = b / &nb.view().insert_axis(Axis(1));
    let logits = ua.dot(&ub.t()) / temperature;
    let softmax = |m: &Array2<f64>| {
        let mut p = m.clone();
        for mut row in p.rows_mut() {
            let mx = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            row.mapv_inplace(|v| (v - mx).exp());
            let sum = row.sum();
            row.mapv_inplace(|v| v / sum);
        }
        p
    };
    let pr = softmax(&logits);
    let pc = softmax(&logits.t().to_owned());
    let mut loss = 0.0;
    for i in 0..n {
        loss -= pr[[i, i]].ln() + pc[[i, i]].ln();
    }
    loss /= 2.0 * n as f64;
    // dL/dlogits = ((P_r - I) + (P_c - I)^T) / (2n)
    let mut dl = pr + &pc.t();
    for i in 0..n {
        dl[[i, i]] -= 2.0;
    }
    dl /= 2.0 * n as f64 * temperature;
    let dua = dl.dot(&ub);
    let dub = dl.t().dot(&ua);
    let back = |u: &Array2<f64>, du: &Array2<f64>, nrm: &Array1<f64>| {
        let mut dz = du.clone();
        for ((mut r, u), &len) in dz.rows_mut().into_iter().zip(u.rows()).zip(nrm) {
            let proj = u.dot(&r);
            r.zip_mut_with(&u, |g, &uu| *g = (*g - uu * proj) / len);
        }
        dz
    };
    Ok((loss, back(&ua, &dua, &na), back(&ub, &dub, &nb)))
}

fn stack(rows: &[&Array1<f64>]) -> Array2<f64> {
    let d = rows[0].len();
    let mut m = Array2::zeros((rows.len(), d));
    for (mut r, v) in m.rows_mut().into_iter().zip(rows) {
        r.assign(v);
    }
    m
}

/// Loss and parameter gradient for one batch of strings.
pub fn calibration_grad(
    params: &ModelParams,
    tok: &Tokenizer,
    batch: &[String],
    cfg: &CalibrateConfig,
    dropout_seed: Option<u64>,
) -> Result<(f64, ModelParams)> {
    let seeds = |view: u64, i: usize| dropout_seed.map(|s| seed::derive(s, view, i as u64));
    let views: Vec<(View, View)> = batch
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            Ok((
                encode_view(params, tok, s, cfg.pooling, seeds(0, i))?,
                encode_view(params, tok, s, cfg.pooling, seeds(1, i))?,
            ))
        })
        .collect::<Result<_>>()?;
    let a = stack(&views.iter().map(|v| &v.0.z).collect::<Vec<_>>());
    let b = stack(&views.iter().map(|v| &v.1.z).collect::<Vec<_>>());
    let (loss, da, db) = infonce_with_grad(&a, &b, cfg.temperature)?;
    let pooling = cfg.pooling;
    let one = |v: &View, dz: ndarray::ArrayView1<'_, f64>| {
        let mut dh = Array2::zeros(v.hidden.dim());
        match pooling {
            Pooling::MeanOverTokens => {
                let scale = 1.0 / v.rows.len() as f64;
                for r in v.rows.clone() {
                    dh.row_mut(r).scaled_add(scale, &dz);
                }
            }
            Pooling::FirstPosition => dh.row_mut(v.rows.start).assign(&dz),
        }
        let mut g = params.zeros_like();
        backward(params, &v.cache, v.hidden.view(), dh, None, &mut g);
        g
    };
    let parts: Vec<ModelParams> = views
        .par_iter()
        .enumerate()
        .flat_map_iter(|(i, (va, vb))| [one(va, da.row(i)), one(vb, db.row(i))])
        .collect();
    let mut total = params.zeros_like();
    for g in &parts {
        total.add_assign(g);
    }
    Ok((loss, total))
}

/// Contrastive loss on `strings` in one batch, with a fixed dropout stream.
pub fn infonce_loss(
    params: &ModelParams,
    tok: &Tokenizer,
    strings: &[String],
    cfg: &CalibrateConfig,
    dropout_seed: Option<u64>,
) -> Result<f64> {
    let mut p = params.clone();
    p.config.dropout = cfg.dropout;
    let views: Vec<(Array1<f64>, Array1<f64>)> = strings
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            let sd = |v| dropout_seed.map(|x| seed::derive(x, v, i as u64));
            Ok((
                encode_view(&p, tok, s, cfg.pooling, sd(0))?.z,
                encode_view(&p, tok, s, cfg.pooling, sd(1))?.z,
            ))
        })
        .collect::<Result<_>>()?;
    let a = stack(&views.iter().map(|v| &v.0).collect::<Vec<_>>());
    let b = stack(&views.iter().map(|v| &v.1).collect::<Vec<_>>());
    Ok(infonce_with_grad(&a, &b, cfg.temperature)?.0)
}

#[derive(Debug, Clone)]
pub struct CalibrationOutcome {
    pub params: ModelParams,
    /// Per-step training loss.
    pub losses: Vec<f64>,
}

/// Contrastive fine-tuning with twin dropout views and in-batch negatives.
/// Incomplete final batches are skipped so every step sees `batch_size` strings.
pub fn mirror_calibrate(
    params: &ModelParams,
    tok: &Tokenizer,
    strings: &[String],
    cfg: &CalibrateConfig,
) -> Result<CalibrationOutcome> {
    if strings.len() < 2 {
        return Err(Error::InvalidArgument("calibration needs at least 2 strings".into()));
    }
    if cfg.batch_size < 2 || cfg.batch_size > strings.len() {
        return Err(Error::InvalidArgument(format!(
            "batch size {} must be in [2, {}]",
            cfg.batch_size,
            strings.len()
        )));
    }
    if cfg.temperature <= 0.0 {
        return Err(Error::InvalidArgument("temperature must be positive".into()));
    }
    let mut p = params.clone();
    if cfg.epochs == 0 {
        return Ok(CalibrationOutcome {
            params: p,
            losses: Vec::new(),
        });
    }
    let original_dropout = p.config.dropout;
    p.config.dropout = cfg.dropout;
    let mut adam = AdamState::new(&p);
    let hyper = AdamHyper {
        beta1: 0.9,
        beta2: 0.999,
        eps: 1e-8,
    };
    let mut order: Vec<usize> = (0..strings.len()).collect();
    let mut losses = Vec::new();
    let mut step = 0u64;
    for epoch in 0..cfg.epochs {
        order.sort_unstable();
        let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(cfg.seed, seed::TAG_CALIBRATE, epoch as u64));
        order.shuffle(&mut rng);
        for chunk in order.chunks_exact(cfg.batch_size) {
            let batch: Vec<String> = chunk.iter().map(|&i| strings[i].clone()).collect();
            let dseed = seed::derive(cfg.seed, seed::TAG_DROPOUT, step);
            let (loss, mut g) = calibration_grad(&p, tok, &batch, cfg, Some(dseed))?;
            clip_grad_norm(&mut g, cfg.clip_norm);
            adam_step(&mut p, &g, &mut adam, cfg.lr, hyper)?;
            losses.push(loss);
            step += 1;
        }
    }
    p.config.dropout = original_dropout;
    Ok(CalibrationOutcome { params: p, losses })
}

/// Orthogonal `W` minimising `Σ ||W x_i − y_i||²` over paired rows.
pub fn procrustes_align(x: &Array2<f64>, y: &Array2<f64>) -> Result<Array2<f64>> {
    if x.dim() != y.dim() {
        return Err(Error::InvalidArgument(format!(
            "paired sets differ in shape: {:?} vs {:?}",
            x.dim(),
            y.dim()
        )));
    }
    let (n, d) = x.dim();
    if n == 0 || d == 0 {
        return Err(Error::InvalidArgument("empty alignment input".into()));
    }
    let m = y.t().dot(x);
    let mm = DMatrix::from_fn(d, d, |i, j| m[[i, j]]);
    let svd = mm.svd(true, true);
    let rank = svd.rank(1e-10 * svd.singular_values.max().max(f64::MIN_POSITIVE));
    if n < d || rank < d {
        log::warn!("alignment input is rank deficient ({rank} < {d}); the map is not unique");
    }
    let u = svd.u.expect("requested U");
    let vt = svd.v_t.expect("requested Vᵀ");
    let w = u * vt;
    Ok(Array2::from_shape_fn((d, d), |(i, j)| w[(i, j)]))
}

/// Applies `W` to every row.
pub fn apply_map(w: &Array2<f64>, x: &Array2<f64>) -> Array2<f64> {
    x.dot(&w.t())
}

fn unit_rows(m: &Array2<f64>, what: &str) -> Result<Array2<f64>> {
    let mut out = m.clone();
    for (i, mut r) in out.rows_mut().into_iter().enumerate() {
        let n = r.dot(&r).sqrt();
        if n == 0.0 || !n.is_finite() {
            return Err(Error::InvalidArgument(format!("{what} row {i} has zero or non-finite norm")));
        }
        r /= n;
    }
    Ok(out)
}

pub fn cosine_matrix(q: &Array2<f64>, t: &Array2<f64>) -> Result<Array2<f64>> {
    if q.ncols() != t.ncols() {
        return Err(Error::InvalidArgument(format!(
            "dimension mismatch: {} vs {}",
            q.ncols(),
            t.ncols()
        )));
    }
    Ok(unit_rows(q, "query")?.dot(&unit_rows(t, "target")?.t()))
}

fn mean_top_k(values: impl Iterator<Item = f64>, k: usize) -> f64 {
    let mut v: Vec<f64> = values.collect();
    v.sort_by(|a, b| b.partial_cmp(a).unwrap_or(Ordering::Equal));
    v[..k].iter().sum::<f64>() / k as f64
}

/// `2·cos(x, y) − r_T(x) − r_S(y)`. The query-side neighbourhood size is
/// `min(k, |queries|)`.
pub fn csls(queries: &Array2<f64>, targets: &Array2<f64>, k: usize) -> Result<Array2<f64>> {
    if k == 0 || k > targets.nrows() {
        return Err(Error::InvalidArgument(format!(
            "csls k = {k} must be in [1, {}]",
            targets.nrows()
        )));
    }
    let cos = cosine_matrix(queries, targets)?;
    let kq = k.min(queries.nrows());
    let r_t: Vec<f64> = cos.rows().into_iter().map(|r| mean_top_k(r.iter().copied(), k)).collect();
    let r_s: Vec<f64> = cos
        .columns()
        .into_iter()
        .map(|c| mean_top_k(c.iter().copied(), kq))
        .collect();
    Ok(Array2::from_shape_fn(cos.dim(), |(i, j)| 2.0 * cos[[i, j]] - r_t[i] - r_s[j]))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Cosine,
    Csls,
}

impl FromStr for Metric {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "cosine" => Ok(Metric::Cosine),
            "csls" => Ok(Metric::Csls),
            other => Err(format!("unknown metric {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingEntry {
    pub lang: String,
    pub entity: String,
    pub vector: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSpace {
    pub dim: usize,
    pub pooling: Pooling,
    pub checkpoint_hash: String,
    pub entries: Vec<EmbeddingEntry>,
}

const SPACE_MAGIC: &str = "#kglm-embeddings";

impl EmbeddingSpace {
    pub fn new(dim: usize, pooling: Pooling, checkpoint_hash: &str, entries: Vec<EmbeddingEntry>) -> Result<Self> {
        let space = EmbeddingSpace {
            dim,
            pooling,
            checkpoint_hash: checkpoint_hash.to_string(),
            entries,
        };
        space.validate()?;
        Ok(space)
    }

    /// Embeds `(lang, entity)` pairs.
    pub fn build(
        params: &ModelParams,
        tok: &Tokenizer,
        items: &[(String, String)],
        pooling: Pooling,
        checkpoint_hash: &str,
    ) -> Result<Self> {
        let surfaces: Vec<String> = items.iter().map(|(_, e)| e.clone()).collect();
        let m = embed_all(params, tok, &surfaces, pooling)?;
        let entries = items
            .iter()
            .zip(m.rows())
            .map(|((l, e), v)| EmbeddingEntry {
                lang: l.clone(),
                entity: e.clone(),
                vector: v.to_vec(),
            })
            .collect();
        Self::new(params.config.d_model, pooling, checkpoint_hash, entries)
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = std::collections::HashSet::new();
        for e in &self.entries {
            if e.vector.len() != self.dim {
                return Err(Error::Validation(format!(
                    "vector for {}:{} has dim {}, expected {}",
                    e.lang,
                    e.entity,
                    e.vector.len(),
                    self.dim
                )));
            }
            if e.vector.iter().any(|v| !v.is_finite()) {
                return Err(Error::Validation(format!("non-finite vector for {}:{}", e.lang, e.entity)));
            }
            if !seen.insert((&e.lang, &e.entity)) {
                return Err(Error::Validation(format!("duplicate entry {}:{}", e.lang, e.entity)));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn matrix(&self) -> Array2<f64> {
        Array2::from_shape_fn((self.entries.len(), self.dim), |(i, j)| self.entries[i].vector[j])
    }

    /// Restricts to one language, keeping entry order.
    pub fn subset(&self, lang: &str) -> Self {
        EmbeddingSpace {
            dim: self.dim,
            pooling: self.pooling,
            checkpoint_hash: self.checkpoint_hash.clone(),
            entries: self.entries.iter().filter(|e| e.lang == lang).cloned().collect(),
        }
    }

    pub fn position(&self, lang: &str, entity: &str) -> Option<usize> {
        self.entries.iter().position(|e| e.lang == lang && e.entity == entity)
    }

    pub fn to_text(&self) -> String {
        let mut out = format!(
            "{SPACE_MAGIC}\tdim={}\tcount={}\tpooling={}\tcheckpoint={}\n",
            self.dim,
            self.entries.len(),
            self.pooling.name(),
            self.checkpoint_hash
        );
        for e in &self.entries {
            let _ = write!(out, "{}\t{}\t", e.lang, e.entity);
            for (i, v) in e.vector.iter().enumerate() {
                if i > 0 {
                    out.push(' ');
                }
                let _ = write!(out, "{v}");
            }
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let bad = |line: usize, msg: String| Error::Parse {
            path: "<embeddings>".into(),
            line,
            msg,
        };
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| bad(1, "empty file".into()))?;
        let mut fields = header.split('\t');
        if fields.next() != Some(SPACE_MAGIC) {
            return Err(bad(1, "missing embedding header".into()));
        }
        let (mut dim, mut count, mut pooling, mut ckpt) = (None, None, None, None);
        for f in fields {
            let (k, v) = f.split_once('=').ok_or_else(|| bad(1, format!("bad header field {f:?}")))?;
            match k {
                "dim" => dim = v.parse::<usize>().ok(),
                "count" => count = v.parse::<usize>().ok(),
                "pooling" => pooling = v.parse::<Pooling>().ok(),
                "checkpoint" => ckpt = Some(v.to_string()),
                _ => return Err(bad(1, format!("unknown header field {k:?}"))),
            }
        }
        let (dim, count, pooling, ckpt) = match (dim, count, pooling, ckpt) {
            (Some(a), Some(b), Some(c), Some(d)) => (a, b, c, d),
            _ => return Err(bad(1, "incomplete header".into())),
        };
        let mut entries = Vec::with_capacity(count);
        for (i, line) in lines.enumerate() {
            let parts: Vec<&str> = line.split('\t').collect();
            if parts.len() != 3 {
                return Err(bad(i + 2, "expected lang, entity and vector".into()));
            }
            let vector = parts[2]
                .split(' ')
                .map(|x| x.parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| bad(i + 2, e.to_string()))?;
            entries.push(EmbeddingEntry {
                lang: parts[0].to_string(),
                entity: parts[1].to_string(),
                vector,
            });
        }
        if entries.len() != count {
            return Err(bad(1, format!("header count {count} but {} entries", entries.len())));
        }
        Self::new(dim, pooling, &ckpt, entries)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_text(&fs::read_to_string(path)?).map_err(|e| match e {
            Error::Parse { line, msg, .. } => Error::Parse {
                path: path.to_path_buf(),
                line,
                msg,
            },
            other => other,
        })
    }
}

/// Top-`top_n` entries of `space` for each query row, by descending
/// similarity with index tie-break.
pub fn retrieve(
    queries: &Array2<f64>,
    space: &EmbeddingSpace,
    metric: Metric,
    top_n: usize,
    csls_k: usize,
) -> Result<Vec<Vec<(usize, f64)>>> {
    if space.is_empty() {
        return Err(Error::InvalidArgument("empty embedding space".into()));
    }
    if queries.ncols() != space.dim {
        return Err(Error::InvalidArgument(format!(
            "query dim {} does not match space dim {}",
            queries.ncols(),
            space.dim
        )));
    }
    let targets = space.matrix();
    let sim = match metric {
        Metric::Cosine => cosine_matrix(queries, &targets)?,
        Metric::Csls => csls(queries, &targets, csls_k.min(targets.nrows()))?,
    };
    Ok(sim
        .rows()
        .into_iter()
        .map(|row| {
            let mut idx: Vec<(usize, f64)> = row.iter().copied().enumerate().collect();
            idx.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap_or(Ordering::Equal).then(a.0.cmp(&b.0)));
            idx.truncate(top_n);
            idx
        })
        .collect())
}
