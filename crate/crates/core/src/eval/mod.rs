//! Ranking metrics, filtered link-prediction evaluation and experiment
//! runners.

mod experiments;
pub mod synthetic;

pub use experiments::{
    fit_lm, fit_lm_with, memorization_eval, tokenizer_for, transfer_experiment, unseen_eval, LmSetup, TransferConfig,
    TransferReport, TrainedLm, xlink_retrieval_accuracy,
};

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::decode::{beam_predict, build_trie, exhaustive_score, LmModel, Ranking};
use crate::error::{Error, Result};
use crate::kg::{FilterIndex, KgVocab, LpSplit, Triple};
use crate::kge::KgeModel;
use crate::linearize::Predicate;

pub const DEFAULT_KS: [usize; 3] = [1, 3, 10];

/// 1-based position of `gold` in `ranked`.
pub fn gold_rank<T: PartialEq>(ranked: &[T], gold: &T) -> Option<usize> {
    ranked.iter().position(|x| x == gold).map(|p| p + 1)
}

/// Fraction of queries whose gold is within the top `k`, for each `k`.
pub fn hits_at_k<T: PartialEq>(ranked: &[Vec<T>], gold: &[T], ks: &[usize]) -> Result<BTreeMap<usize, f64>> {
    if ranked.len() != gold.len() {
        return Err(Error::InvalidArgument(format!(
            "{} ranked lists for {} gold entities",
            ranked.len(),
            gold.len()
        )));
    }
    let ranks: Vec<Option<usize>> = ranked.iter().zip(gold).map(|(r, g)| gold_rank(r, g)).collect();
    ks.iter().map(|&k| Ok((k, hits_from_ranks(&ranks, k)?))).collect()
}

pub fn hits_from_ranks(ranks: &[Option<usize>], k: usize) -> Result<f64> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    if ranks.is_empty() {
        return Ok(0.0);
    }
    Ok(ranks.iter().filter(|r| r.is_some_and(|r| r <= k)).count() as f64 / ranks.len() as f64)
}

/// Mean reciprocal rank; a missing gold contributes 0.
pub fn mrr<T: PartialEq>(ranked: &[Vec<T>], gold: &[T]) -> Result<f64> {
    if ranked.len() != gold.len() {
        return Err(Error::InvalidArgument("ranked lists and gold differ in length".into()));
    }
    let ranks: Vec<Option<usize>> = ranked.iter().zip(gold).map(|(r, g)| gold_rank(r, g)).collect();
    Ok(mrr_from_ranks(&ranks))
}

pub fn mrr_from_ranks(ranks: &[Option<usize>]) -> f64 {
    if ranks.is_empty() {
        return 0.0;
    }
    ranks.iter().map(|r| r.map_or(0.0, |r| 1.0 / r as f64)).sum::<f64>() / ranks.len() as f64
}

/// One link-prediction query `(subject, relation, ?)` in a language.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Query {
    pub lang: String,
    pub subject: String,
    pub relation: String,
}

impl From<&Triple> for Query {
    fn from(t: &Triple) -> Self {
        Query {
            lang: t.lang.clone(),
            subject: t.subject.clone(),
            relation: t.relation.clone(),
        }
    }
}

/// Anything that can order a candidate list for a query.
pub trait LinkPredictor: Sync {
    fn describe(&self) -> String;

    /// Ranking over `candidates` (ids are indices into it).
    fn rank(&self, query: &Query, candidates: &[String]) -> Result<Ranking>;

    /// Whether every candidate gets a finite score, which makes MRR meaningful.
    fn full_ranking(&self) -> bool;
}

pub struct BeamPredictor<'a> {
    pub model: LmModel<'a>,
    pub k: usize,
}

impl LinkPredictor for BeamPredictor<'_> {
    fn describe(&self) -> String {
        format!("lm-beam(k={})", self.k)
    }

    fn rank(&self, q: &Query, candidates: &[String]) -> Result<Ranking> {
        let trie = build_trie(candidates, self.model.tok)?;
        beam_predict(&self.model, &q.subject, &Predicate::Relation(q.relation.clone()), &trie, self.k)
    }

    fn full_ranking(&self) -> bool {
        false
    }
}

pub struct ExhaustivePredictor<'a> {
    pub model: LmModel<'a>,
}

impl LinkPredictor for ExhaustivePredictor<'_> {
    fn describe(&self) -> String {
        "lm-exhaustive".into()
    }

    fn rank(&self, q: &Query, candidates: &[String]) -> Result<Ranking> {
        exhaustive_score(&self.model, &q.subject, &Predicate::Relation(q.relation.clone()), candidates)
    }

    fn full_ranking(&self) -> bool {
        true
    }
}

pub struct KgePredictor<'a> {
    pub model: &'a KgeModel,
}

impl LinkPredictor for KgePredictor<'_> {
    fn describe(&self) -> String {
        self.model.kind.name().to_string()
    }

    /// Loss is the negated score.
    fn rank(&self, q: &Query, candidates: &[String]) -> Result<Ranking> {
        let mut entries = candidates
            .iter()
            .enumerate()
            .map(|(i, o)| Ok((i, -self.model.score(&q.lang, &q.subject, &q.relation, o)?)))
            .collect::<Result<Vec<_>>>()?;
        entries.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        Ok(Ranking {
            entries,
            forward_count: 0,
        })
    }

    fn full_ranking(&self) -> bool {
        true
    }
}

/// Per-language (or averaged) metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub queries: usize,
    pub hits1: f64,
    pub hits3: f64,
    pub hits10: f64,
    pub mrr: Option<f64>,
    /// Queries the predictor could not score; counted as misses.
    pub unsupported: usize,
}

impl Metrics {
    fn from_ranks(ranks: &[Option<usize>], full: bool, unsupported: usize) -> Result<Self> {
        Ok(Metrics {
            queries: ranks.len(),
            hits1: hits_from_ranks(ranks, 1)?,
            hits3: hits_from_ranks(ranks, 3)?,
            hits10: hits_from_ranks(ranks, 10)?,
            mrr: full.then(|| mrr_from_ranks(ranks)),
            unsupported,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryResult {
    pub lang: String,
    pub subject: String,
    pub relation: String,
    pub gold: String,
    pub rank: Option<usize>,
    pub top: Option<String>,
    pub candidates: usize,
    pub forward_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LpReport {
    pub model: String,
    pub filtered: bool,
    pub per_lang: BTreeMap<String, Metrics>,
    /// Macro average over languages.
    pub avg: Metrics,
    pub queries: Vec<QueryResult>,
}

impl LpReport {
    pub fn from_results(model: String, filtered: bool, full: bool, queries: Vec<QueryResult>) -> Result<Self> {
        let mut by_lang: BTreeMap<String, (Vec<Option<usize>>, usize)> = BTreeMap::new();
        for q in &queries {
            let e = by_lang.entry(q.lang.clone()).or_default();
            e.0.push(q.rank);
            if q.candidates == 0 {
                e.1 += 1;
            }
        }
        let per_lang = by_lang
            .into_iter()
            .map(|(l, (ranks, unsupported))| Ok((l, Metrics::from_ranks(&ranks, full, unsupported)?)))
            .collect::<Result<BTreeMap<_, _>>>()?;
        let n = per_lang.len().max(1) as f64;
        let mean = |f: &dyn Fn(&Metrics) -> f64| per_lang.values().map(f).sum::<f64>() / n;
        let avg = Metrics {
            queries: per_lang.values().map(|m| m.queries).sum(),
            hits1: mean(&|m| m.hits1),
            hits3: mean(&|m| m.hits3),
            hits10: mean(&|m| m.hits10),
            mrr: full.then(|| mean(&|m| m.mrr.unwrap_or(0.0))),
            unsupported: per_lang.values().map(|m| m.unsupported).sum(),
        };
        Ok(LpReport {
            model,
            filtered,
            per_lang,
            avg,
            queries,
        })
    }

    /// One JSON object per language plus one for the average.
    pub fn to_jsonl(&self) -> Result<String> {
        #[derive(Serialize)]
        struct Row<'a> {
            model: &'a str,
            filtered: bool,
            lang: &'a str,
            #[serde(flatten)]
            metrics: &'a Metrics,
        }
        let mut out = String::new();
        let rows = self
            .per_lang
            .iter()
            .map(|(l, m)| (l.as_str(), m))
            .chain(std::iter::once(("avg", &self.avg)));
        for (lang, metrics) in rows {
            out.push_str(&serde_json::to_string(&Row {
                model: &self.model,
                filtered: self.filtered,
                lang,
                metrics,
            })?);
            out.push('\n');
        }
        Ok(out)
    }
}

/// Ranks every test triple of `split` with `predictor`. Candidates are the
/// filtered set when `filtered`, else the full language inventory.
pub fn lp_evaluate(
    predictor: &dyn LinkPredictor,
    split: &LpSplit,
    vocab: &KgVocab,
    filtered: bool,
) -> Result<LpReport> {
    let index = FilterIndex::from_split(split, vocab);
    evaluate_triples(predictor, &split.test, &index, filtered)
}

/// Like [`lp_evaluate`] for an arbitrary triple list and filter index.
pub fn evaluate_triples(
    predictor: &dyn LinkPredictor,
    triples: &[Triple],
    index: &FilterIndex,
    filtered: bool,
) -> Result<LpReport> {
    let results: Vec<QueryResult> = triples
        .par_iter()
        .map(|t| {
            let cands = if filtered {
                index.candidates(&t.lang, &t.subject, &t.relation, &t.object)?
            } else {
                let c = index.all_candidates(&t.lang)?;
                if !c.contains(&t.object) {
                    return Err(Error::Validation(format!(
                        "gold entity {:?} is not in the {} entity vocabulary",
                        t.object, t.lang
                    )));
                }
                c
            };
            let gold = cands.iter().position(|c| *c == t.object).expect("gold is a candidate");
            let mut r = QueryResult {
                lang: t.lang.clone(),
                subject: t.subject.clone(),
                relation: t.relation.clone(),
                gold: t.object.clone(),
                rank: None,
                top: None,
                candidates: cands.len(),
                forward_count: 0,
            };
            match predictor.rank(&Query::from(t), &cands) {
                Ok(ranking) => {
                    r.rank = ranking.rank_of(gold);
                    r.top = ranking.top().map(|(e, _)| cands[e].clone());
                    r.forward_count = ranking.forward_count;
                }
                Err(Error::Unsupported(msg)) => {
                    log::debug!("unsupported query: {msg}");
                    r.candidates = 0;
                }
                Err(e) => return Err(e),
            }
            Ok(r)
        })
        .collect::<Result<_>>()?;
    LpReport::from_results(predictor.describe(), filtered, predictor.full_ranking(), results)
}

/// Fixed-width table: one row per report, Hits@1/3/10 per language and the
/// macro average.
pub fn render_table(reports: &[LpReport]) -> String {
    let mut langs: Vec<&String> = reports.iter().flat_map(|r| r.per_lang.keys()).collect();
    langs.sort();
    langs.dedup();
    let name_w = reports.iter().map(|r| r.model.len()).max().unwrap_or(5).max(5);
    let mut out = String::new();
    let _ = write!(out, "{:<name_w$}", "model");
    for l in langs.iter().map(|l| l.as_str()).chain(["avg"]) {
        let _ = write!(out, " | {:^20}", l);
    }
    out.push('\n');
    let _ = write!(out, "{:<name_w$}", "");
    for _ in 0..=langs.len() {
        let _ = write!(out, " | {:>6} {:>6} {:>6}", "H@1", "H@3", "H@10");
    }
    out.push('\n');
    for r in reports {
        let _ = write!(out, "{:<name_w$}", r.model);
        let cells = langs.iter().map(|l| r.per_lang.get(*l)).chain([Some(&r.avg)]);
        for m in cells {
            match m {
                Some(m) => {
                    let _ = write!(
                        out,
                        " | {:>6.1} {:>6.1} {:>6.1}",
                        100.0 * m.hits1,
                        100.0 * m.hits3,
                        100.0 * m.hits10
                    );
                }
                None => {
                    let _ = write!(out, " | {:>6} {:>6} {:>6}", "-", "-", "-");
                }
            }
        }
        out.push('\n');
    }
    out
}

/// Fraction of queries whose retrieved top-1 is the gold entry.
pub fn retrieval_accuracy(ranked: &[Vec<(usize, f64)>], gold: &[usize]) -> Result<f64> {
    let lists: Vec<Vec<usize>> = ranked.iter().map(|r| r.iter().map(|x| x.0).collect()).collect();
    Ok(hits_at_k(&lists, gold, &[1])?[&1])
}
