//! Adam training over a mixed stream of linearized triples and links.

mod checkpoint;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, RngState, CHECKPOINT_VERSION};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kg::{Triple, XLink};
use crate::linearize::{linearize_fact, Fact, LinearizedFact, DEFAULT_MAX_LEN};
use crate::model::{grad, lm_loss, forward, build_mask, Dropout, MaskMode, ModelParams};
use crate::seed;
use crate::tokenizer::Tokenizer;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub base_lr: f64,
    pub warmup_frac: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub dropout: f64,
    pub seed: u64,
    pub max_len: usize,
    pub mask_mode: MaskMode,
    pub use_triples: bool,
    pub use_xlinks: bool,
    /// Train each link in both directions.
    pub xlink_both_directions: bool,
    /// Emit a checkpoint every this many steps; 0 disables intermediate ones.
    pub checkpoint_every: u64,
    /// Global gradient-norm clip; 0 disables clipping.
    pub clip_norm: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            batch_size: 32,
            base_lr: 5e-4,
            warmup_frac: 0.06,
            beta1: 0.9,
            beta2: 0.98,
            eps: 1e-6,
            dropout: 0.1,
            seed: 0,
            max_len: DEFAULT_MAX_LEN,
            mask_mode: MaskMode::StrictPrefix,
            use_triples: true,
            use_xlinks: true,
            xlink_both_directions: true,
            checkpoint_every: 500,
            clip_norm: 1.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.warmup_frac > 0.0 && self.warmup_frac < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "warmup_frac {} not in (0, 1)",
                self.warmup_frac
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch_size must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::InvalidArgument(format!("dropout {} not in [0, 1)", self.dropout)));
        }
        if !(self.base_lr >= 0.0 && self.base_lr.is_finite()) {
            return Err(Error::InvalidArgument(format!("base_lr {} is invalid", self.base_lr)));
        }
        Ok(())
    }
}

/// Linear warmup to `base_lr` over the first `⌈warmup_frac·total⌉` steps,
/// then linear decay to 0 at `total`.
pub fn lr_at(step: u64, total_steps: u64, base_lr: f64, warmup_frac: f64) -> f64 {
    if total_steps == 0 {
        return 0.0;
    }
    let step = step.min(total_steps);
    let warm = ((warmup_frac * total_steps as f64).ceil() as u64).min(total_steps);
    if step < warm {
        base_lr * step as f64 / warm as f64
    } else if total_steps == warm {
        base_lr
    } else {
        base_lr * (total_steps - step) as f64 / (total_steps - warm) as f64
    }
}

/// Adam moments, laid out like the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: ModelParams,
    pub v: ModelParams,
    pub t: u64,
}

impl AdamState {
    pub fn new(params: &ModelParams) -> Self {
        AdamState {
            m: params.zeros_like(),
            v: params.zeros_like(),
            t: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamHyper {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl From<&TrainConfig> for AdamHyper {
    fn from(c: &TrainConfig) -> Self {
        AdamHyper {
            beta1: c.beta1,
            beta2: c.beta2,
            eps: c.eps,
        }
    }
}

/// One bias-corrected Adam update without weight decay. Parameters are left
/// untouched if any gradient entry is non-finite.
pub fn adam_step(
    params: &mut ModelParams,
    grads: &ModelParams,
    state: &mut AdamState,
    lr: f64,
    h: AdamHyper,
) -> Result<()> {
    let mut bad = None;
    grads.for_each(|name, g| {
        if bad.is_none() {
            if let Some(i) = g.iter().position(|x| !x.is_finite()) {
                bad = Some(format!("non-finite gradient in {name}[{i}] = {}", g[i]));
            }
        }
    });
    if let Some(msg) = bad {
        return Err(Error::Numeric(msg));
    }
    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - h.beta1.powi(t);
    let c2 = 1.0 - h.beta2.powi(t);
    state.m.zip_mut(grads, |_, m, g| {
        for (m, g) in m.iter_mut().zip(g) {
            *m = h.beta1 * *m + (1.0 - h.beta1) * g;
        }
    });
    state.v.zip_mut(grads, |_, v, g| {
        for (v, g) in v.iter_mut().zip(g) {
            *v = h.beta2 * *v + (1.0 - h.beta2) * g * g;
        }
    });
    let m = &state.m;
    let v = &state.v;
    let mut vs = v.slices().into_iter();
    params.zip_mut(m, |_, p, m| {
        let (_, v) = vs.next().expect("same layout");
        for ((p, m), v) in p.iter_mut().zip(m).zip(v) {
            let mh = m / c1;
            let vh = v / c2;
            *p -= lr * mh / (vh.sqrt() + h.eps);
        }
    });
    Ok(())
}

/// Rescales `grads` in place so its global norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm(grads: &mut ModelParams, max_norm: f64) -> f64 {
    let norm = grads.global_norm();
    if max_norm > 0.0 && norm > max_norm {
        grads.scale(max_norm / norm);
    }
    norm
}

/// Facts in stream order: triples, then links (each followed by its reverse
/// when requested).
pub fn fact_stream<'a>(
    triples: impl IntoIterator<Item = &'a Triple>,
    xlinks: impl IntoIterator<Item = &'a XLink>,
    cfg: &TrainConfig,
) -> Vec<Fact> {
    let mut out = Vec::new();
    if cfg.use_triples {
        out.extend(triples.into_iter().cloned().map(Fact::Triple));
    }
    if cfg.use_xlinks {
        for x in xlinks {
            out.push(Fact::XLink(x.clone()));
            if cfg.xlink_both_directions {
                out.push(Fact::XLink(XLink {
                    lang_a: x.lang_b.clone(),
                    entity_a: x.entity_b.clone(),
                    lang_b: x.lang_a.clone(),
                    entity_b: x.entity_a.clone(),
                }));
            }
        }
    }
    out
}

/// Linearized training data after the length filter.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub facts: Vec<LinearizedFact>,
    pub total: usize,
    pub dropped: usize,
}

impl PreparedData {
    pub fn dropped_fraction(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.dropped as f64 / self.total as f64
        }
    }
}

/// Linearizes every fact, dropping those whose length reaches `max_len`.
pub fn prepare(facts: &[Fact], tok: &Tokenizer, max_len: usize) -> Result<PreparedData> {
    let mut kept = Vec::with_capacity(facts.len());
    let mut dropped = 0;
    for f in facts {
        match linearize_fact(f, tok, max_len) {
            Ok(l) => kept.push(l),
            Err(Error::TooLong { .. }) => dropped += 1,
            Err(e) => return Err(e),
        }
    }
    let data = PreparedData {
        facts: kept,
        total: facts.len(),
        dropped,
    };
    log::info!(
        "length filter: dropped {}/{} facts ({:.4}%)",
        data.dropped,
        data.total,
        100.0 * data.dropped_fraction()
    );
    Ok(data)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub step: u64,
    pub lr: f64,
    pub loss: f64,
    pub epoch: usize,
}

/// Receives progress during [`train`].
pub trait TrainObserver {
    fn on_step(&mut self, _record: &LogRecord) -> Result<()> {
        Ok(())
    }

    /// Called every `checkpoint_every` steps and once at the end.
    fn on_checkpoint(&mut self, _step: u64, _params: &ModelParams, _adam: &AdamState) -> Result<()> {
        Ok(())
    }
}

/// Observer that ignores everything.
pub struct Silent;

impl TrainObserver for Silent {}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub adam: AdamState,
    pub steps: u64,
    pub log: Vec<LogRecord>,
}

impl TrainOutcome {
    pub fn final_loss(&self) -> Option<f64> {
        self.log.last().map(|r| r.loss)
    }
}

pub fn steps_per_epoch(n: usize, batch_size: usize) -> u64 {
    n.div_ceil(batch_size) as u64
}

/// Runs the full schedule. The model's own dropout rate is overridden by
/// `cfg.dropout`.
pub fn train(
    cfg: &TrainConfig,
    mut params: ModelParams,
    data: &PreparedData,
    observer: &mut dyn TrainObserver,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if data.facts.is_empty() {
        return Err(Error::Validation("no training facts left after length filtering".into()));
    }
    if let Some(f) = data.facts.iter().find(|f| f.len() > params.config.max_len) {
        return Err(Error::TooLong {
            len: f.len(),
            max: params.config.max_len,
        });
    }
    params.config.dropout = cfg.dropout;
    let mut adam = AdamState::new(&params);
    let per_epoch = steps_per_epoch(data.facts.len(), cfg.batch_size);
    let total = per_epoch * cfg.epochs as u64;
    let hyper = AdamHyper::from(cfg);
    let mut log = Vec::with_capacity(total as usize);
    let mut step = 0u64;
    let mut order: Vec<usize> = (0..data.facts.len()).collect();
    let mut batch = Vec::with_capacity(cfg.batch_size);
    for epoch in 0..cfg.epochs {
        order.sort_unstable();
        let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(cfg.seed, seed::TAG_SHUFFLE, epoch as u64));
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            batch.clear();
            batch.extend(chunk.iter().map(|&i| data.facts[i].clone()));
            let dseed = (cfg.dropout > 0.0).then(|| seed::derive(cfg.seed, seed::TAG_DROPOUT, step));
            let (loss, mut g) = grad(&params, &batch, cfg.mask_mode, dseed)?;
            if !loss.is_finite() {
                return Err(Error::Numeric(format!("loss became {loss} at step {step}")));
            }
            clip_grad_norm(&mut g, cfg.clip_norm);
            let lr = lr_at(step + 1, total, cfg.base_lr, cfg.warmup_frac);
            adam_step(&mut params, &g, &mut adam, lr, hyper)?;
            step += 1;
            let rec = LogRecord { step, lr, loss, epoch };
            observer.on_step(&rec)?;
            log.push(rec);
            if cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0 && step != total {
                observer.on_checkpoint(step, &params, &adam)?;
            }
        }
    }
    observer.on_checkpoint(step, &params, &adam)?;
    Ok(TrainOutcome {
        params,
        adam,
        steps: step,
        log,
    })
}

/// Mean object-span loss with dropout off.
pub fn eval_loss(params: &ModelParams, facts: &[LinearizedFact], mode: MaskMode) -> Result<f64> {
    if facts.is_empty() {
        return Err(Error::InvalidArgument("empty probe batch".into()));
    }
    let mut total = 0.0;
    for f in facts {
        let out = forward(params, &f.ids, &build_mask(f, mode), Dropout::Off)?;
        total += lm_loss(&out.logits, f)?;
    }
    Ok(total / facts.len() as f64)
}
