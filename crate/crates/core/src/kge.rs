//! TransE, ComplEx and RotatE link-prediction baselines.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::str::FromStr;

use ndarray::{Array2, ArrayView1};
use num_complex::Complex64;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kg::{LpSplit, Triple};
use crate::seed;

pub const ROTATE_MODULUS_TOL: f64 = 1e-6;

/// `−‖h + r − t‖₂`.
pub fn transe_score(h: &[f64], r: &[f64], t: &[f64]) -> f64 {
    -h.iter()
        .zip(r)
        .zip(t)
        .map(|((h, r), t)| (h + r - t).powi(2))
        .sum::<f64>()
        .sqrt()
}

/// `Re(Σ hᵢ·rᵢ·conj(tᵢ))`.
pub fn complex_score(h: &[Complex64], r: &[Complex64], t: &[Complex64]) -> f64 {
    h.iter().zip(r).zip(t).map(|((h, r), t)| (h * r * t.conj()).re).sum()
}

/// `−‖h ∘ r − t‖₂` with every `|rᵢ| = 1`.
pub fn rotate_score(h: &[Complex64], r: &[Complex64], t: &[Complex64]) -> Result<f64> {
    if let Some(bad) = r.iter().find(|r| (r.norm() - 1.0).abs() > ROTATE_MODULUS_TOL) {
        return Err(Error::InvalidArgument(format!(
            "rotation entry {bad} has modulus {}",
            bad.norm()
        )));
    }
    Ok(-h
        .iter()
        .zip(r)
        .zip(t)
        .map(|((h, r), t)| (h * r - t).norm_sqr())
        .sum::<f64>()
        .sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KgeKind {
    TransE,
    ComplEx,
    RotatE,
}

impl KgeKind {
    pub const ALL: [KgeKind; 3] = [KgeKind::TransE, KgeKind::ComplEx, KgeKind::RotatE];

    pub fn name(self) -> &'static str {
        match self {
            KgeKind::TransE => "transe",
            KgeKind::ComplEx => "complex",
            KgeKind::RotatE => "rotate",
        }
    }

    fn is_complex(self) -> bool {
        !matches!(self, KgeKind::TransE)
    }
}

impl FromStr for KgeKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "transe" => Ok(KgeKind::TransE),
            "complex" => Ok(KgeKind::ComplEx),
            "rotate" => Ok(KgeKind::RotatE),
            other => Err(format!("unknown KGE model {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KgeConfig {
    pub dim: usize,
    pub epochs: usize,
    pub negatives: usize,
    pub lr: f64,
    /// Margin for TransE and RotatE.
    pub gamma: f64,
    pub self_adversarial: bool,
    pub adversarial_temperature: f64,
    pub seed: u64,
}

impl Default for KgeConfig {
    fn default() -> Self {
        KgeConfig {
            dim: 64,
            epochs: 100,
            negatives: 8,
            lr: 0.05,
            gamma: 2.0,
            self_adversarial: true,
            adversarial_temperature: 1.0,
            seed: 0,
        }
    }
}

type Key = (String, String);

#[derive(Debug, Clone, PartialEq)]
pub struct KgeModel {
    pub kind: KgeKind,
    pub dim: usize,
    pub gamma: f64,
    pub entities: BTreeMap<Key, usize>,
    pub relations: BTreeMap<Key, usize>,
    /// One row per entity; complex models store `[re | im]`.
    pub ent: Array2<f64>,
    pub rel: Array2<f64>,
}

fn as_complex(row: ArrayView1<'_, f64>, dim: usize) -> Vec<Complex64> {
    (0..dim).map(|i| Complex64::new(row[i], row[dim + i])).collect()
}

impl KgeModel {
    fn width(kind: KgeKind, dim: usize) -> usize {
        if kind.is_complex() {
            2 * dim
        } else {
            dim
        }
    }

    /// Random model over the entities and relations of `triples`.
    pub fn init<'a>(kind: KgeKind, cfg: &KgeConfig, triples: impl IntoIterator<Item = &'a Triple>) -> Result<Self> {
        if cfg.dim == 0 {
            return Err(Error::InvalidArgument("KGE dim must be positive".into()));
        }
        let mut entities = BTreeMap::new();
        let mut relations = BTreeMap::new();
        for t in triples {
            entities.insert((t.lang.clone(), t.subject.clone()), 0);
            entities.insert((t.lang.clone(), t.object.clone()), 0);
            relations.insert((t.lang.clone(), t.relation.clone()), 0);
        }
        for (i, v) in entities.values_mut().enumerate() {
            *v = i;
        }
        for (i, v) in relations.values_mut().enumerate() {
            *v = i;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(cfg.seed, seed::TAG_KGE, 0));
        let w = Self::width(kind, cfg.dim);
        let bound = 6.0 / (cfg.dim as f64).sqrt();
        let ent = Array2::from_shape_fn((entities.len(), w), |_| rng.gen_range(-bound..bound));
        let rel = match kind {
            KgeKind::RotatE => {
                let mut m = Array2::zeros((relations.len(), w));
                for mut row in m.rows_mut() {
                    for i in 0..cfg.dim {
                        let phase: f64 = rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI);
                        row[i] = phase.cos();
                        row[cfg.dim + i] = phase.sin();
                    }
                }
                m
            }
            _ => Array2::from_shape_fn((relations.len(), w), |_| rng.gen_range(-bound..bound)),
        };
        let mut m = KgeModel {
            kind,
            dim: cfg.dim,
            gamma: cfg.gamma,
            entities,
            relations,
            ent,
            rel,
        };
        if kind == KgeKind::TransE {
            for i in 0..m.ent.nrows() {
                m.normalize_entity(i);
            }
        }
        Ok(m)
    }

    pub fn entity_id(&self, lang: &str, name: &str) -> Option<usize> {
        self.entities.get(&(lang.to_string(), name.to_string())).copied()
    }

    pub fn relation_id(&self, lang: &str, name: &str) -> Option<usize> {
        self.relations.get(&(lang.to_string(), name.to_string())).copied()
    }

    pub fn score_ids(&self, h: usize, r: usize, t: usize) -> Result<f64> {
        let (he, re, te) = (self.ent.row(h), self.rel.row(r), self.ent.row(t));
        let d = self.dim;
        Ok(match self.kind {
            KgeKind::TransE => transe_score(
                he.as_slice().expect("contiguous"),
                re.as_slice().expect("contiguous"),
                te.as_slice().expect("contiguous"),
            ),
            KgeKind::ComplEx => complex_score(&as_complex(he, d), &as_complex(re, d), &as_complex(te, d)),
            KgeKind::RotatE => rotate_score(&as_complex(he, d), &as_complex(re, d), &as_complex(te, d))?,
        })
    }

    /// Score of a named triple; entities or relations never seen in training
    /// are unsupported.
    pub fn score(&self, lang: &str, subject: &str, relation: &str, object: &str) -> Result<f64> {
        let unseen = |what: &str, n: &str| Error::Unsupported(format!("{what} {lang}:{n} has no KGE embedding"));
        let h = self.entity_id(lang, subject).ok_or_else(|| unseen("entity", subject))?;
        let r = self.relation_id(lang, relation).ok_or_else(|| unseen("relation", relation))?;
        let t = self.entity_id(lang, object).ok_or_else(|| unseen("entity", object))?;
        self.score_ids(h, r, t)
    }

    /// Largest deviation of a RotatE relation entry from unit modulus.
    pub fn max_modulus_error(&self) -> f64 {
        if self.kind != KgeKind::RotatE {
            return 0.0;
        }
        let d = self.dim;
        self.rel
            .rows()
            .into_iter()
            .flat_map(|r| (0..d).map(move |i| ((r[i].powi(2) + r[d + i].powi(2)).sqrt() - 1.0).abs()))
            .fold(0.0, f64::max)
    }

    fn normalize_entity(&mut self, i: usize) {
        let mut row = self.ent.row_mut(i);
        let n = row.dot(&row).sqrt();
        if n > 0.0 {
            row /= n;
        }
    }

    fn project_relation(&mut self, i: usize) {
        let d = self.dim;
        let mut row = self.rel.row_mut(i);
        for k in 0..d {
            let m = (row[k].powi(2) + row[d + k].powi(2)).sqrt();
            if m > 0.0 {
                row[k] /= m;
                row[d + k] /= m;
            } else {
                row[k] = 1.0;
                row[d + k] = 0.0;
            }
        }
    }

    /// Gradient of the score w.r.t. the head, relation and tail rows.
    fn score_grad(&self, h: usize, r: usize, t: usize) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let d = self.dim;
        let (he, re, te) = (self.ent.row(h), self.rel.row(r), self.ent.row(t));
        match self.kind {
            KgeKind::TransE => {
                let u: Vec<f64> = (0..d).map(|i| he[i] + re[i] - te[i]).collect();
                let n = u.iter().map(|x| x * x).sum::<f64>().sqrt();
                if n == 0.0 {
                    return (vec![0.0; d], vec![0.0; d], vec![0.0; d]);
                }
                let g: Vec<f64> = u.iter().map(|x| -x / n).collect();
                let neg: Vec<f64> = g.iter().map(|x| -x).collect();
                (g.clone(), g, neg)
            }
            KgeKind::ComplEx => {
                let (mut gh, mut gr, mut gt) = (vec![0.0; 2 * d], vec![0.0; 2 * d], vec![0.0; 2 * d]);
                for i in 0..d {
                    let (hr, hi, rr, ri, tr, ti) = (he[i], he[d + i], re[i], re[d + i], te[i], te[d + i]);
                    gh[i] = rr * tr + ri * ti;
                    gh[d + i] = -ri * tr + rr * ti;
                    gr[i] = hr * tr + hi * ti;
                    gr[d + i] = -hi * tr + hr * ti;
                    gt[i] = hr * rr - hi * ri;
                    gt[d + i] = hr * ri + hi * rr;
                }
                (gh, gr, gt)
            }
            KgeKind::RotatE => {
                let mut u = vec![0.0; 2 * d];
                for i in 0..d {
                    let (hr, hi, rr, ri) = (he[i], he[d + i], re[i], re[d + i]);
                    u[i] = hr * rr - hi * ri - te[i];
                    u[d + i] = hr * ri + hi * rr - te[d + i];
                }
                let n = u.iter().map(|x| x * x).sum::<f64>().sqrt();
                let (mut gh, mut gr, mut gt) = (vec![0.0; 2 * d], vec![0.0; 2 * d], vec![0.0; 2 * d]);
                if n == 0.0 {
                    return (gh, gr, gt);
                }
                for i in 0..d {
                    let (gre, gim) = (-u[i] / n, -u[d + i] / n);
                    let (hr, hi, rr, ri) = (he[i], he[d + i], re[i], re[d + i]);
                    gh[i] = gre * rr + gim * ri;
                    gh[d + i] = -gre * ri + gim * rr;
                    gr[i] = gre * hr + gim * hi;
                    gr[d + i] = -gre * hi + gim * hr;
                    gt[i] = -gre;
                    gt[d + i] = -gim;
                }
                (gh, gr, gt)
            }
        }
    }

    /// Text export: a header line, then `E`/`R` rows of
    /// `kind \t lang \t name \t values`.
    pub fn to_text(&self) -> String {
        let mut out = format!(
            "#kglm-kge\tkind={}\tdim={}\tgamma={}\tentities={}\trelations={}\n",
            self.kind.name(),
            self.dim,
            self.gamma,
            self.entities.len(),
            self.relations.len()
        );
        let mut emit = |tag: &str, index: &BTreeMap<Key, usize>, m: &Array2<f64>| {
            for ((lang, name), &i) in index {
                let _ = write!(out, "{tag}\t{lang}\t{name}\t");
                for (k, v) in m.row(i).iter().enumerate() {
                    if k > 0 {
                        out.push(' ');
                    }
                    let _ = write!(out, "{v}");
                }
                out.push('\n');
            }
        };
        emit("E", &self.entities, &self.ent);
        emit("R", &self.relations, &self.rel);
        out
    }
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Mean training loss per positive and the per-score coefficients `dL/ds`
/// for the positive and each negative.
fn loss_coefficients(kind: KgeKind, cfg: &KgeConfig, gamma: f64, pos: f64, negs: &[f64]) -> (f64, f64, Vec<f64>) {
    let n = negs.len() as f64;
    let weights: Vec<f64> = if cfg.self_adversarial {
        let a = cfg.adversarial_temperature;
        let mx = negs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = negs.iter().map(|s| (a * (s - mx)).exp()).collect();
        let z: f64 = e.iter().sum();
        e.into_iter().map(|x| x / z).collect()
    } else {
        vec![1.0 / n; negs.len()]
    };
    match kind {
        KgeKind::TransE | KgeKind::RotatE => {
            let mut loss = 0.0;
            let mut dpos = 0.0;
            let mut dneg = vec![0.0; negs.len()];
            for (j, (&s, &w)) in negs.iter().zip(&weights).enumerate() {
                let hinge = gamma - pos + s;
                if hinge > 0.0 {
                    loss += w * hinge;
                    dpos -= w;
                    dneg[j] = w;
                }
            }
            (loss, dpos, dneg)
        }
        KgeKind::ComplEx => {
            let mut loss = softplus(-pos);
            let dpos = -sigmoid(-pos);
            let dneg = negs
                .iter()
                .zip(&weights)
                .map(|(&s, &w)| {
                    loss += w * softplus(s);
                    w * sigmoid(s)
                })
                .collect();
            (loss, dpos, dneg)
        }
    }
}

#[derive(Debug, Clone)]
pub struct KgeOutcome {
    pub model: KgeModel,
    /// Mean loss per epoch.
    pub epoch_losses: Vec<f64>,
}

/// SGD with uniform head-or-tail corruption inside the triple's language.
/// Self-adversarial weights are treated as constants.
pub fn train_kge(kind: KgeKind, split: &LpSplit, cfg: &KgeConfig) -> Result<KgeOutcome> {
    let train: Vec<&Triple> = split.train.iter().collect();
    if train.is_empty() {
        return Err(Error::Validation("empty training set".into()));
    }
    if cfg.negatives == 0 {
        return Err(Error::InvalidArgument("at least one negative sample is required".into()));
    }
    // Test entities get rows too so filtered evaluation can score them.
    let mut m = KgeModel::init(kind, cfg, split.all_triples())?;
    let mut by_lang: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for ((lang, _), &i) in &m.entities {
        by_lang.entry(lang.clone()).or_default().push(i);
    }
    let ids: Vec<(usize, usize, usize, &str)> = train
        .iter()
        .map(|t| {
            (
                m.entity_id(&t.lang, &t.subject).expect("indexed"),
                m.relation_id(&t.lang, &t.relation).expect("indexed"),
                m.entity_id(&t.lang, &t.object).expect("indexed"),
                t.lang.as_str(),
            )
        })
        .collect();
    let mut order: Vec<usize> = (0..ids.len()).collect();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(cfg.seed, seed::TAG_KGE, 1 + epoch as u64));
        order.sort_unstable();
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for &qi in &order {
            let (h, r, t, lang) = ids[qi];
            let pool = &by_lang[lang];
            let negs: Vec<(usize, usize)> = (0..cfg.negatives)
                .map(|_| {
                    let e = pool[rng.gen_range(0..pool.len())];
                    if rng.gen_bool(0.5) {
                        (e, t)
                    } else {
                        (h, e)
                    }
                })
                .collect();
            let pos = m.score_ids(h, r, t)?;
            let neg_scores: Vec<f64> = negs
                .iter()
                .map(|&(a, b)| m.score_ids(a, r, b))
                .collect::<Result<_>>()?;
            let (loss, dpos, dneg) = loss_coefficients(kind, cfg, m.gamma, pos, &neg_scores);
            total += loss;
            let mut updates: Vec<(bool, usize, Vec<f64>)> = Vec::new();
            let mut push = |a: usize, b: usize, coef: f64, m: &KgeModel| {
                if coef == 0.0 {
                    return;
                }
                let (gh, gr, gt) = m.score_grad(a, r, b);
                let sc = |g: Vec<f64>| g.into_iter().map(|x| x * coef).collect::<Vec<_>>();
                updates.push((true, a, sc(gh)));
                updates.push((false, r, sc(gr)));
                updates.push((true, b, sc(gt)));
            };
            push(h, t, dpos, &m);
            for (&(a, b), &c) in negs.iter().zip(&dneg) {
                push(a, b, c, &m);
            }
            for (is_ent, row, g) in &updates {
                let mut target = if *is_ent { m.ent.row_mut(*row) } else { m.rel.row_mut(*row) };
                for (p, g) in target.iter_mut().zip(g) {
                    *p -= cfg.lr * g;
                }
            }
            for (is_ent, row, _) in &updates {
                match (kind, is_ent) {
                    (KgeKind::TransE, true) => m.normalize_entity(*row),
                    (KgeKind::RotatE, false) => m.project_relation(*row),
                    _ => {}
                }
            }
        }
        if !m.ent.iter().chain(m.rel.iter()).all(|v| v.is_finite()) {
            return Err(Error::Numeric(format!("KGE parameters became non-finite in epoch {epoch}")));
        }
        epoch_losses.push(total / ids.len() as f64);
    }
    Ok(KgeOutcome {
        model: m,
        epoch_losses,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn transe_hand_values() {
        assert_eq!(transe_score(&[1.0, 2.0], &[0.5, -1.0], &[1.5, 1.0]), 0.0);
        assert!((transe_score(&[1.0, 0.0], &[0.0, 1.0], &[0.0, 0.0]) + 2f64.sqrt()).abs() < 1e-15);
        // 90° rotation applied to all three arguments
        let rot = |v: &[f64]| vec![-v[1], v[0]];
        let (h, r, t) = ([0.3, -1.2], [2.0, 0.7], [-0.4, 0.1]);
        let a = transe_score(&h, &r, &t);
        let b = transe_score(&rot(&h), &rot(&r), &rot(&t));
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn complex_hand_values() {
        assert_eq!(complex_score(&[c(1.0, 0.0)], &[c(1.0, 0.0)], &[c(1.0, 0.0)]), 1.0);
        let real = complex_score(&[c(2.0, 0.0), c(-1.0, 0.0)], &[c(3.0, 0.0), c(0.5, 0.0)], &[c(1.0, 0.0), c(4.0, 0.0)]);
        assert_eq!(real, 2.0 * 3.0 - 0.5 * 4.0);
    }

    #[test]
    fn rotate_hand_values() {
        assert!(rotate_score(&[c(1.0, 0.0)], &[c(0.0, 1.0)], &[c(0.0, 1.0)]).unwrap().abs() < 1e-15);
        let h = [c(0.2, 1.0), c(-3.0, 0.5)];
        let t = [c(1.0, 1.0), c(0.0, -2.0)];
        let id = [c(1.0, 0.0), c(1.0, 0.0)];
        let d: f64 = h.iter().zip(&t).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>().sqrt();
        assert!((rotate_score(&h, &id, &t).unwrap() + d).abs() < 1e-15);
        assert!(rotate_score(&h, &[c(1.1, 0.0), c(1.0, 0.0)], &t).is_err());
    }

    fn cyclic_split(n: usize) -> LpSplit {
        let train: Vec<Triple> = (0..n)
            .flat_map(|i| {
                [
                    Triple::new("en", &format!("e{i}"), "next", &format!("e{}", (i + 1) % n)),
                    Triple::new("en", &format!("e{i}"), "skip", &format!("e{}", (i + 2) % n)),
                ]
            })
            .collect();
        LpSplit {
            train,
            test: Vec::new(),
            removed: Vec::new(),
            seed: 0,
            ratio: 0.0,
        }
    }

    #[test]
    fn score_gradients_match_finite_differences() {
        let split = cyclic_split(5);
        for kind in KgeKind::ALL {
            let cfg = KgeConfig {
                dim: 3,
                ..Default::default()
            };
            let m = KgeModel::init(kind, &cfg, split.all_triples()).unwrap();
            let (gh, gr, gt) = m.score_grad(0, 1, 2);
            let eps = 1e-6;
            for (is_ent, row, g) in [(true, 0, &gh), (false, 1, &gr), (true, 2, &gt)] {
                for k in 0..g.len() {
                    let bump = |delta: f64| {
                        let mut mm = m.clone();
                        if is_ent {
                            mm.ent[[row, k]] += delta;
                        } else {
                            mm.rel[[row, k]] += delta;
                        }
                        // RotatE modulus is checked only at the API boundary.
                        let d = mm.dim;
                        let (he, re, te) = (mm.ent.row(0), mm.rel.row(1), mm.ent.row(2));
                        match kind {
                            KgeKind::RotatE => -(0..d)
                                .map(|i| (c(he[i], he[d + i]) * c(re[i], re[d + i]) - c(te[i], te[d + i])).norm_sqr())
                                .sum::<f64>()
                                .sqrt(),
                            _ => mm.score_ids(0, 1, 2).unwrap(),
                        }
                    };
                    let fd = (bump(eps) - bump(-eps)) / (2.0 * eps);
                    assert!((fd - g[k]).abs() < 1e-6, "{kind:?} {k}: {fd} vs {}", g[k]);
                }
            }
        }
    }

    #[test]
    fn zero_epochs_returns_init() {
        let split = cyclic_split(6);
        let cfg = KgeConfig {
            epochs: 0,
            dim: 4,
            ..Default::default()
        };
        let out = train_kge(KgeKind::TransE, &split, &cfg).unwrap();
        assert_eq!(out.model, KgeModel::init(KgeKind::TransE, &cfg, split.all_triples()).unwrap());
    }

    #[test]
    fn rotate_keeps_unit_modulus_and_is_deterministic() {
        let split = cyclic_split(8);
        let cfg = KgeConfig {
            epochs: 3,
            dim: 8,
            ..Default::default()
        };
        let a = train_kge(KgeKind::RotatE, &split, &cfg).unwrap();
        assert!(a.model.max_modulus_error() < ROTATE_MODULUS_TOL);
        let b = train_kge(KgeKind::RotatE, &split, &cfg).unwrap();
        assert_eq!(a.model, b.model);
    }

    #[test]
    fn unseen_entity_is_unsupported() {
        let split = cyclic_split(4);
        let m = KgeModel::init(KgeKind::ComplEx, &KgeConfig::default(), split.all_triples()).unwrap();
        assert!(matches!(m.score("en", "nobody", "next", "e1"), Err(Error::Unsupported(_))));
        assert!(m.score("en", "e0", "next", "e1").is_ok());
    }
}
