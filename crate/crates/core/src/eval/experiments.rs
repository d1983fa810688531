use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::synthetic::{bilingual_kg, random_kg};
use super::{evaluate_triples, retrieval_accuracy, BeamPredictor, LpReport};
use crate::decode::{LmModel, DEFAULT_BEAM_WIDTH};
use crate::embed::{apply_map, embed_all, procrustes_align, retrieve, EmbeddingEntry, EmbeddingSpace, Metric, Pooling};
use crate::error::{Error, Result};
use crate::kg::{build_vocab, FilterIndex, KgVocab, Triple, XLink};
use crate::model::{MaskMode, ModelConfig, ModelParams};
use crate::seed;
use crate::tokenizer::Tokenizer;
use crate::train::{fact_stream, prepare, train, Silent, TrainConfig, TrainOutcome};

/// Everything needed to train a model from raw facts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LmSetup {
    /// `vocab_size` is replaced by the tokenizer's.
    pub model: ModelConfig,
    pub merges: usize,
    pub train: TrainConfig,
}

impl LmSetup {
    /// Settings for KGs of a few hundred facts: few merges so names share
    /// pieces, small batches, no dropout.
    pub fn small_kg() -> Self {
        let mut s = LmSetup {
            merges: 10,
            ..LmSetup::default()
        };
        s.train.base_lr = 1e-3;
        s.train.batch_size = 8;
        s.train.dropout = 0.0;
        s
    }
}

impl Default for LmSetup {
    fn default() -> Self {
        LmSetup {
            model: ModelConfig::new(1),
            merges: 200,
            train: TrainConfig::default(),
        }
    }
}

pub struct TrainedLm {
    pub tok: Tokenizer,
    pub params: ModelParams,
    pub outcome: TrainOutcome,
    pub mask_mode: MaskMode,
}

impl TrainedLm {
    pub fn model(&self) -> LmModel<'_> {
        LmModel::new(&self.params, &self.tok, self.mask_mode)
    }
}

/// Tokenizer over every surface string and language of the given facts.
pub fn tokenizer_for(vocab: &KgVocab, merges: usize) -> Result<Tokenizer> {
    let langs: Vec<String> = vocab.languages.iter().cloned().collect();
    Tokenizer::train(&vocab.surface_strings(), merges, &langs)
}

/// Trains a fresh model on `triples` and `xlinks` with a given tokenizer.
pub fn fit_lm_with(tok: Tokenizer, triples: &[Triple], xlinks: &[XLink], setup: &LmSetup) -> Result<TrainedLm> {
    let mut cfg = setup.model.clone();
    cfg.vocab_size = tok.vocab_size();
    let params = ModelParams::init(&cfg, seed::derive(setup.train.seed, seed::TAG_INIT, 0))?;
    let facts = fact_stream(triples, xlinks, &setup.train);
    let data = prepare(&facts, &tok, setup.train.max_len)?;
    let outcome = train(&setup.train, params, &data, &mut Silent)?;
    Ok(TrainedLm {
        tok,
        params: outcome.params.clone(),
        outcome,
        mask_mode: setup.train.mask_mode,
    })
}

/// Builds a tokenizer from the facts themselves, then trains.
pub fn fit_lm(triples: &[Triple], xlinks: &[XLink], setup: &LmSetup) -> Result<TrainedLm> {
    let vocab = build_vocab(triples, xlinks);
    let tok = tokenizer_for(&vocab, setup.merges)?;
    fit_lm_with(tok, triples, xlinks, setup)
}

/// Trains on a random KG and ranks its own training triples with beam
/// search over filtered candidates.
pub fn memorization_eval(
    setup: &LmSetup,
    n_entities: usize,
    n_relations: usize,
    data_seed: u64,
    k: usize,
) -> Result<(LpReport, TrainedLm)> {
    let triples = random_kg(n_entities, n_relations, "en", data_seed);
    let lm = fit_lm(&triples, &[], setup)?;
    let vocab = build_vocab(&triples, &[]);
    let index = FilterIndex::new(&triples, &vocab);
    let pred = BeamPredictor { model: lm.model(), k };
    let report = evaluate_triples(&pred, &triples, &index, true)?;
    Ok((report, lm))
}

/// Ranks triples whose subjects never occur in `train`, over the full
/// entity set of each language.
pub fn unseen_eval(
    model: &LmModel<'_>,
    k: usize,
    train: &[Triple],
    test: &[Triple],
    vocab: &KgVocab,
) -> Result<LpReport> {
    let seen: BTreeSet<(&str, &str)> = train
        .iter()
        .flat_map(|t| [(t.lang.as_str(), t.subject.as_str()), (t.lang.as_str(), t.object.as_str())])
        .collect();
    if let Some(t) = test.iter().find(|t| seen.contains(&(t.lang.as_str(), t.subject.as_str()))) {
        return Err(Error::Validation(format!("subject {:?} occurs in training facts", t.subject)));
    }
    let index = FilterIndex::new(train.iter().chain(test), vocab);
    evaluate_triples(&BeamPredictor { model: *model, k }, test, &index, false)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferConfig {
    pub n_entities: usize,
    pub n_relations: usize,
    /// Fraction of language-B triples evaluated.
    pub eval_fraction: f64,
    /// Remove the evaluated triples from B's training data. With `false` both
    /// conditions train on all of B (the control arm).
    pub withhold: bool,
    pub seeds: Vec<u64>,
    pub lang_a: String,
    pub lang_b: String,
    pub beam_k: usize,
    pub setup: LmSetup,
}

impl Default for TransferConfig {
    fn default() -> Self {
        TransferConfig {
            n_entities: 60,
            n_relations: 4,
            eval_fraction: 0.3,
            withhold: true,
            seeds: vec![1, 2, 3],
            lang_a: "en".into(),
            lang_b: "fi".into(),
            beam_k: DEFAULT_BEAM_WIDTH,
            setup: LmSetup::small_kg(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferReport {
    pub withhold: bool,
    pub seeds: Vec<u64>,
    /// A + B triples + links.
    pub all: Vec<LpReport>,
    /// B triples only.
    pub single: Vec<LpReport>,
    /// Hits@1(All) − Hits@1(Single) per seed.
    pub deltas: Vec<f64>,
    pub mean_delta: f64,
}

impl TransferReport {
    pub fn mean_hits1(reports: &[LpReport]) -> f64 {
        reports.iter().map(|r| r.avg.hits1).sum::<f64>() / reports.len().max(1) as f64
    }
}

/// Trains the All and Single conditions per seed and evaluates both on the
/// same sample of language-B triples.
pub fn transfer_experiment(cfg: &TransferConfig) -> Result<TransferReport> {
    if cfg.seeds.is_empty() {
        return Err(Error::InvalidArgument("at least one seed is required".into()));
    }
    let kg = bilingual_kg(cfg.n_entities, cfg.n_relations, &cfg.lang_a, &cfg.lang_b);
    let n_eval = (cfg.eval_fraction * kg.b.len() as f64).round() as usize;
    if n_eval == 0 || (cfg.withhold && n_eval >= kg.b.len()) {
        return Err(Error::Validation(format!(
            "degenerate transfer setup: {n_eval} of {} B triples evaluated",
            kg.b.len()
        )));
    }
    let all_triples: Vec<Triple> = kg.a.iter().chain(&kg.b).cloned().collect();
    let vocab = build_vocab(&all_triples, &kg.xlinks);
    let index = FilterIndex::new(&all_triples, &vocab);
    // Both conditions share one tokenizer, as they would share a pretrained one.
    let tok = tokenizer_for(&vocab, cfg.setup.merges)?;
    let mut report = TransferReport {
        withhold: cfg.withhold,
        seeds: cfg.seeds.clone(),
        all: Vec::new(),
        single: Vec::new(),
        deltas: Vec::new(),
        mean_delta: 0.0,
    };
    for &s in &cfg.seeds {
        let mut order: Vec<usize> = (0..kg.b.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed::derive(s, seed::TAG_DATA, 3)));
        let eval_idx: BTreeSet<usize> = order[..n_eval].iter().copied().collect();
        let eval: Vec<Triple> = eval_idx.iter().map(|&i| kg.b[i].clone()).collect();
        let b_train: Vec<Triple> = kg
            .b
            .iter()
            .enumerate()
            .filter(|(i, _)| !cfg.withhold || !eval_idx.contains(i))
            .map(|(_, t)| t.clone())
            .collect();
        let mut setup = cfg.setup.clone();
        setup.train.seed = s;
        let all_train: Vec<Triple> = kg.a.iter().cloned().chain(b_train.iter().cloned()).collect();
        let lm_all = fit_lm_with(tok.clone(), &all_train, &kg.xlinks, &setup)?;
        let lm_single = fit_lm_with(tok.clone(), &b_train, &[], &setup)?;
        let run = |lm: &TrainedLm, name: &str| -> Result<LpReport> {
            let mut r = evaluate_triples(&BeamPredictor { model: lm.model(), k: cfg.beam_k }, &eval, &index, true)?;
            r.model = format!("{name} seed={s}");
            Ok(r)
        };
        let ra = run(&lm_all, "all")?;
        let rs = run(&lm_single, "single")?;
        log::info!(
            "transfer seed {s}: all H@1 {:.3}, single H@1 {:.3}",
            ra.avg.hits1,
            rs.avg.hits1
        );
        report.deltas.push(ra.avg.hits1 - rs.avg.hits1);
        report.all.push(ra);
        report.single.push(rs);
    }
    report.mean_delta = report.deltas.iter().sum::<f64>() / report.deltas.len() as f64;
    Ok(report)
}

/// Retrieves the counterpart of every `test_links` source among all test
/// targets and returns top-1 accuracy. Sources are first mapped by the
/// Procrustes fit on `train_links`; with no training links the shared space
/// is used as is.
pub fn xlink_retrieval_accuracy(
    params: &ModelParams,
    tok: &Tokenizer,
    train_links: &[XLink],
    test_links: &[XLink],
    pooling: Pooling,
    metric: Metric,
    csls_k: usize,
) -> Result<f64> {
    if test_links.is_empty() {
        return Err(Error::InvalidArgument("no test links".into()));
    }
    let side = |links: &[XLink], a: bool| -> Vec<String> {
        links.iter().map(|l| if a { l.entity_a.clone() } else { l.entity_b.clone() }).collect()
    };
    let mut queries = embed_all(params, tok, &side(test_links, true), pooling)?;
    if !train_links.is_empty() {
        let x = embed_all(params, tok, &side(train_links, true), pooling)?;
        let y = embed_all(params, tok, &side(train_links, false), pooling)?;
        queries = apply_map(&procrustes_align(&x, &y)?, &queries);
    }
    let targets = embed_all(params, tok, &side(test_links, false), pooling)?;
    let entries = test_links
        .iter()
        .zip(targets.rows())
        .map(|(l, v)| EmbeddingEntry {
            lang: l.lang_b.clone(),
            entity: l.entity_b.clone(),
            vector: v.to_vec(),
        })
        .collect();
    let space = EmbeddingSpace::new(params.config.d_model, pooling, "", entries)?;
    let ranked = retrieve(&queries, &space, metric, 1, csls_k)?;
    let gold: Vec<usize> = (0..test_links.len()).collect();
    retrieval_accuracy(&ranked, &gold)
}
