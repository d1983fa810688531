use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use kglm_core::decode::{beam_predict, build_trie, exhaustive_score, LmModel};
use kglm_core::embed::{
    apply_map, embed_all, mirror_calibrate, procrustes_align, retrieve, EmbeddingSpace, Metric,
};
use kglm_core::eval::{
    lp_evaluate, render_table, retrieval_accuracy, tokenizer_for, transfer_experiment, BeamPredictor,
    ExhaustivePredictor, KgePredictor, LinkPredictor, LmSetup, LpReport, TransferConfig,
};
use kglm_core::kg::{
    format_triples, format_xlinks, parse_triples, parse_xlinks, split_lp, LpSplit, Triple, TripleSet, XLink, XLinkSet,
};
use kglm_core::kge::{train_kge, KgeKind};
use kglm_core::linearize::Predicate;
use kglm_core::model::{ModelParams, ModelConfig};
use kglm_core::seed;
use kglm_core::tokenizer::Tokenizer;
use kglm_core::train::{
    fact_stream, prepare, save_checkpoint, train, AdamState, Checkpoint, LogRecord, RngState, TrainObserver,
};

use crate::artifacts::{load_model, load_tokenizer, Dataset, Outputs, TEST_FILE, TRAIN_FILE, XLINK_FILE};
use crate::cli::*;
use crate::config::{DecodeMode, RunConfig};
use crate::UsageError;

pub const TOKENIZER_FILE: &str = "tokenizer.txt";
pub const MODEL_FILE: &str = "model.ckpt";

fn jsonl<T: Serialize>(rows: impl IntoIterator<Item = T>) -> Result<String> {
    let mut out = String::new();
    for r in rows {
        out.push_str(&serde_json::to_string(&r)?);
        out.push('\n');
    }
    Ok(out)
}

// ingest -------------------------------------------------------------------

#[derive(Serialize)]
struct LangInventory {
    entities: usize,
    relations: usize,
    triples: usize,
}

#[derive(Serialize)]
struct IngestSummary {
    records_read: usize,
    duplicates: usize,
    triples: usize,
    xlinks: usize,
    train: usize,
    test: usize,
    removed_inverse: usize,
    languages: BTreeMap<String, LangInventory>,
}

pub fn ingest(args: &IngestArgs, cfg: &RunConfig) -> Result<()> {
    let mut out = Outputs::new(&args.out);
    let mut triples = TripleSet::default();
    let (mut read, mut dups) = (0, 0);
    for p in &args.triples {
        let set = parse_triples(p)?;
        read += set.records_read;
        dups += set.duplicates();
        for t in set.iter() {
            if !triples.insert(t.clone()) {
                dups += 1;
            }
        }
        out.input(p)?;
    }
    if triples.is_empty() {
        bail!(kglm_core::Error::Validation("no triples in the input files".into()));
    }
    let mut links = XLinkSet::default();
    for p in &args.xlinks {
        for x in parse_xlinks(p)?.iter() {
            links.insert(x.clone());
        }
        out.input(p)?;
    }
    let split = match &args.test {
        Some(p) => {
            out.input(p)?;
            fixed_split(&triples, &parse_triples(p)?, cfg.seed)
        }
        None => split_lp(&triples, cfg.test_ratio, cfg.seed)?,
    };
    let links = links.to_vec();
    let vocab = kglm_core::kg::build_vocab(triples.iter(), &links);
    let mut languages = BTreeMap::new();
    for lang in &vocab.languages {
        languages.insert(
            lang.clone(),
            LangInventory {
                entities: vocab.entities_of(lang).count(),
                relations: vocab.relations.get(lang).map_or(0, |r| r.len()),
                triples: triples.iter().filter(|t| &t.lang == lang).count(),
            },
        );
    }
    out.add(TRAIN_FILE, format_triples(&split.train));
    out.add(TEST_FILE, format_triples(&split.test));
    out.add("removed.tsv", format_triples(&split.removed));
    out.add(XLINK_FILE, format_xlinks(&links));
    out.add_json("split.json", &split.manifest())?;
    out.add_json(
        "summary.json",
        &IngestSummary {
            records_read: read,
            duplicates: dups,
            triples: triples.len(),
            xlinks: links.len(),
            train: split.train.len(),
            test: split.test.len(),
            removed_inverse: split.removed.len(),
            languages,
        },
    )?;
    out.commit("ingest", cfg)?;
    log::info!("ingested {} triples, {} links into {}", triples.len(), links.len(), args.out.display());
    Ok(())
}

/// Split with a given test set; the inverse-edge rule still applies.
fn fixed_split(all: &TripleSet, test: &TripleSet, seed: u64) -> LpSplit {
    let train: Vec<Triple> = all.iter().filter(|t| !test.contains(t)).cloned().collect();
    let edges: HashSet<(&str, &str, &str)> = train
        .iter()
        .map(|t| (t.lang.as_str(), t.subject.as_str(), t.object.as_str()))
        .collect();
    let (removed, kept): (Vec<Triple>, Vec<Triple>) = test
        .iter()
        .cloned()
        .partition(|t| edges.contains(&(t.lang.as_str(), t.object.as_str(), t.subject.as_str())));
    let ratio = kept.len() as f64 / (train.len() + kept.len()).max(1) as f64;
    LpSplit {
        train,
        test: kept,
        removed,
        seed,
        ratio,
    }
}

// tokenize -----------------------------------------------------------------

pub fn tokenize(args: &TokenizeArgs, cfg: &RunConfig) -> Result<()> {
    let data = Dataset::load(&args.data)?;
    let mut out = Outputs::new(&args.out);
    for p in data.input_files(&args.data) {
        out.input(&p)?;
    }
    let tok = tokenizer_for(&data.vocab, cfg.merges)?;
    out.add(TOKENIZER_FILE, tok.to_text());
    out.commit("tokenize", cfg)?;
    log::info!("tokenizer with {} pieces written", tok.vocab_size());
    Ok(())
}

// train --------------------------------------------------------------------

/// Writes periodic checkpoints straight to disk and buffers the log.
struct CheckpointWriter<'a> {
    dir: &'a Path,
    tok_hash: String,
    cfg: &'a RunConfig,
    log: String,
}

impl TrainObserver for CheckpointWriter<'_> {
    fn on_step(&mut self, r: &LogRecord) -> kglm_core::Result<()> {
        self.log.push_str(&serde_json::to_string(r)?);
        self.log.push('\n');
        if r.step % 100 == 0 {
            log::info!("step {} epoch {} lr {:.2e} loss {:.4}", r.step, r.epoch, r.lr, r.loss);
        }
        Ok(())
    }

    fn on_checkpoint(&mut self, step: u64, params: &ModelParams, adam: &AdamState) -> kglm_core::Result<()> {
        let ckpt = make_checkpoint(params, &self.tok_hash, self.cfg, step, Some(adam.clone()));
        fs::create_dir_all(self.dir)?;
        save_checkpoint(&self.dir.join(format!("ckpt-{step:07}.ckpt")), &ckpt)
    }
}

fn make_checkpoint(params: &ModelParams, tok_hash: &str, cfg: &RunConfig, step: u64, adam: Option<AdamState>) -> Checkpoint {
    Checkpoint {
        params: params.clone(),
        tokenizer_hash: tok_hash.to_string(),
        train_config: Some(cfg.train.clone()),
        step,
        rng: RngState { seed: cfg.seed, step },
        adam,
    }
}

#[derive(Serialize)]
struct TrainSummary {
    facts: usize,
    dropped_too_long: usize,
    dropped_fraction: f64,
    steps: u64,
    parameters: usize,
    first_loss: Option<f64>,
    final_loss: Option<f64>,
}

pub fn train_cmd(args: &TrainArgs, cfg: &RunConfig) -> Result<()> {
    let data = Dataset::load(&args.data)?;
    let mut out = Outputs::new(&args.out);
    for p in data.input_files(&args.data) {
        out.input(&p)?;
    }
    let tok = match &args.tokenizer {
        Some(p) => {
            out.input(p)?;
            load_tokenizer(p)?
        }
        None => tokenizer_for(&data.vocab, cfg.merges)?,
    };
    let model_cfg: ModelConfig = cfg.model.to_config(tok.vocab_size(), cfg.train.max_len, cfg.train.dropout);
    let params = ModelParams::init(&model_cfg, seed::derive(cfg.seed, seed::TAG_INIT, 0))?;
    let facts = fact_stream(&data.split.train, &data.xlinks, &cfg.train);
    let prepared = prepare(&facts, &tok, cfg.train.max_len)?;
    let ckpt_dir = args.out.join("checkpoints");
    let mut writer = CheckpointWriter {
        dir: &ckpt_dir,
        tok_hash: tok.hash(),
        cfg,
        log: String::new(),
    };
    let outcome = train(&cfg.train, params, &prepared, &mut writer)?;
    let ckpt = make_checkpoint(&outcome.params, &tok.hash(), cfg, outcome.steps, Some(outcome.adam.clone()));
    out.add(MODEL_FILE, ckpt.to_bytes()?);
    out.add(TOKENIZER_FILE, tok.to_text());
    out.add("train_log.jsonl", std::mem::take(&mut writer.log));
    out.add_json(
        "train_summary.json",
        &TrainSummary {
            facts: prepared.total,
            dropped_too_long: prepared.dropped,
            dropped_fraction: prepared.dropped_fraction(),
            steps: outcome.steps,
            parameters: outcome.params.num_params(),
            first_loss: outcome.log.first().map(|r| r.loss),
            final_loss: outcome.final_loss(),
        },
    )?;
    out.commit("train", cfg)?;
    log::info!("trained {} steps, final loss {:?}", outcome.steps, outcome.final_loss());
    Ok(())
}

// predict ------------------------------------------------------------------

struct LoadedModel {
    tok: Tokenizer,
    ckpt: Checkpoint,
}

impl LoadedModel {
    fn load(model: &ModelArgs, out: Option<&mut Outputs>) -> Result<Self> {
        let tok_path = model.tokenizer_path();
        let tok = load_tokenizer(&tok_path)?;
        let ckpt = load_model(&model.checkpoint, &tok)?;
        if let Some(out) = out {
            out.input(&model.checkpoint)?;
            out.input(&tok_path)?;
        }
        Ok(LoadedModel { tok, ckpt })
    }

    fn lm(&self, cfg: &RunConfig) -> LmModel<'_> {
        LmModel::new(&self.ckpt.params, &self.tok, cfg.train.mask_mode)
    }
}

#[derive(Serialize)]
struct PredictionRow<'a> {
    lang: &'a str,
    subject: &'a str,
    predicate: String,
    rank: usize,
    entity: &'a str,
    loss: f64,
}

fn rank_query(
    lm: &LmModel<'_>,
    cfg: &RunConfig,
    subject: &str,
    predicate: &Predicate,
    candidates: &[String],
) -> Result<Vec<(usize, f64)>> {
    let ranking = match cfg.decode.mode {
        DecodeMode::Beam => beam_predict(lm, subject, predicate, &build_trie(candidates, lm.tok)?, cfg.decode.k)?,
        DecodeMode::Exhaustive => exhaustive_score(lm, subject, predicate, candidates)?,
    };
    Ok(ranking.finite().collect())
}

pub fn predict(args: &PredictArgs, cfg: &RunConfig) -> Result<()> {
    let data = Dataset::load(&args.data)?;
    let mut out = Outputs::new(args.out.as_deref().unwrap_or(Path::new(".")));
    let model = LoadedModel::load(&args.model, Some(&mut out))?;
    let lm = model.lm(cfg);
    let queries: Vec<(String, String, String)> = match (&args.batch, &args.subject) {
        (Some(path), None) => {
            out.input(path)?;
            read_queries(path)?
        }
        (None, Some(subject)) => {
            let lang = args.lang.clone().ok_or_else(|| UsageError("--lang is required with --subject".into()))?;
            let pred = match (&args.relation, &args.target_lang) {
                (Some(r), None) => r.clone(),
                (None, Some(t)) => format!("@{t}"),
                _ => return Err(UsageError("give exactly one of --relation or --target-lang".into()).into()),
            };
            vec![(lang, subject.clone(), pred)]
        }
        _ => return Err(UsageError("give either --subject or --batch".into()).into()),
    };
    let mut rows = Vec::new();
    for (lang, subject, pred) in &queries {
        let (predicate, cand_lang) = match pred.strip_prefix('@') {
            Some(target) => (Predicate::LangPair(lang.clone(), target.to_string()), target.to_string()),
            None => (Predicate::Relation(pred.clone()), lang.clone()),
        };
        let candidates: Vec<String> = data.vocab.entities_of(&cand_lang).cloned().collect();
        if candidates.is_empty() {
            bail!(kglm_core::Error::Validation(format!("no {cand_lang} entities in {}", args.data.display())));
        }
        let ranked = rank_query(&lm, cfg, subject, &predicate, &candidates)?;
        for (i, &(e, loss)) in ranked.iter().take(args.top).enumerate() {
            rows.push((lang.clone(), subject.clone(), pred.clone(), i + 1, candidates[e].clone(), loss));
        }
    }
    let mut text = String::new();
    for (lang, subject, pred, rank, entity, loss) in &rows {
        let _ = writeln!(text, "{lang}\t{subject}\t{pred}\t{rank}\t{entity}\t{loss:.6}");
    }
    print!("{text}");
    if args.out.is_some() {
        let json = jsonl(rows.iter().map(|(lang, subject, pred, rank, entity, loss)| PredictionRow {
            lang,
            subject,
            predicate: pred.clone(),
            rank: *rank,
            entity,
            loss: *loss,
        }))?;
        out.add("predictions.jsonl", json);
        out.commit("predict", cfg)?;
    }
    Ok(())
}

/// `lang \t subject \t relation` lines; a relation of `@xx` asks for the
/// counterpart in language `xx`.
fn read_queries(path: &Path) -> Result<Vec<(String, String, String)>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 3 {
            bail!(kglm_core::Error::Parse {
                path: path.to_owned(),
                line: i + 1,
                msg: format!("expected 3 tab-separated fields, found {}", f.len()),
            });
        }
        out.push((f[0].trim().to_string(), f[1].trim().to_string(), f[2].trim().to_string()));
    }
    Ok(out)
}

// eval-lp ------------------------------------------------------------------

fn report_outputs(out: &mut Outputs, reports: &[LpReport]) -> Result<()> {
    let mut metrics = String::new();
    let mut queries = String::new();
    for r in reports {
        metrics.push_str(&r.to_jsonl()?);
        queries.push_str(&jsonl(r.queries.iter().map(|q| (&r.model, q)))?);
    }
    out.add("report.jsonl", metrics);
    out.add("queries.jsonl", queries);
    out.add("table.txt", render_table(reports));
    Ok(())
}

pub fn eval_lp(args: &EvalArgs, cfg: &RunConfig) -> Result<()> {
    let mut out = Outputs::new(&args.out);
    let model = LoadedModel::load(&args.model, Some(&mut out))?;
    let data = Dataset::load(&args.data)?;
    for p in data.input_files(&args.data) {
        out.input(&p)?;
    }
    let lm = model.lm(cfg);
    let predictor: Box<dyn LinkPredictor + '_> = match cfg.decode.mode {
        DecodeMode::Beam => Box::new(BeamPredictor { model: lm, k: cfg.decode.k }),
        DecodeMode::Exhaustive => Box::new(ExhaustivePredictor { model: lm }),
    };
    let report = lp_evaluate(predictor.as_ref(), &data.split, &data.vocab, cfg.eval.filtered)?;
    print!("{}", render_table(std::slice::from_ref(&report)));
    report_outputs(&mut out, &[report])?;
    out.commit("eval-lp", cfg)?;
    Ok(())
}

// calibrate ----------------------------------------------------------------

pub fn calibrate(args: &CalibrateArgs, cfg: &RunConfig) -> Result<()> {
    let mut out = Outputs::new(&args.out);
    let model = LoadedModel::load(&args.model, Some(&mut out))?;
    let data = Dataset::load(&args.data)?;
    for p in data.input_files(&args.data) {
        out.input(&p)?;
    }
    let strings: Vec<String> = data.vocab.surface_strings();
    let outcome = mirror_calibrate(&model.ckpt.params, &model.tok, &strings, &cfg.calibrate)?;
    let mut ckpt = model.ckpt.clone();
    ckpt.params = outcome.params;
    ckpt.adam = None;
    out.add(MODEL_FILE, ckpt.to_bytes()?);
    out.add(TOKENIZER_FILE, model.tok.to_text());
    out.add(
        "calibrate_log.jsonl",
        jsonl(outcome.losses.iter().enumerate().map(|(i, l)| serde_json::json!({"step": i + 1, "loss": l})))?,
    );
    out.commit("calibrate", cfg)?;
    log::info!("calibrated for {} steps", outcome.losses.len());
    Ok(())
}

// align --------------------------------------------------------------------

/// Links between the two languages, oriented source → target.
fn oriented_links(links: &[XLink], src: &str, tgt: &str) -> Vec<XLink> {
    let mut v: Vec<XLink> = links
        .iter()
        .filter_map(|l| {
            if l.lang_a == src && l.lang_b == tgt {
                Some(l.clone())
            } else if l.lang_a == tgt && l.lang_b == src {
                Some(XLink::new(src, &l.entity_b, tgt, &l.entity_a))
            } else {
                None
            }
        })
        .collect();
    v.sort_by(|a, b| (&a.entity_a, &a.entity_b).cmp(&(&b.entity_a, &b.entity_b)));
    v.dedup();
    v
}

fn map_to_text(w: &Array2<f64>) -> String {
    let mut s = format!("#kglm-map\tdim={}\n", w.nrows());
    for row in w.rows() {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:e}")).collect();
        s.push_str(&cells.join(" "));
        s.push('\n');
    }
    s
}

fn map_from_text(text: &str, path: &Path) -> Result<Array2<f64>> {
    let bad = |line: usize, msg: &str| kglm_core::Error::Parse {
        path: path.to_owned(),
        line,
        msg: msg.to_string(),
    };
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| bad(1, "empty file"))?;
    let dim: usize = header
        .strip_prefix("#kglm-map\tdim=")
        .and_then(|d| d.parse().ok())
        .ok_or_else(|| bad(1, "expected `#kglm-map\\tdim=N` header"))?;
    let mut w = Array2::zeros((dim, dim));
    for i in 0..dim {
        let line = lines.next().ok_or_else(|| bad(i + 2, "missing row"))?;
        let vals: Vec<f64> = line
            .split(' ')
            .map(|v| v.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| bad(i + 2, "non-numeric value"))?;
        if vals.len() != dim {
            return Err(bad(i + 2, "wrong row width").into());
        }
        for (j, v) in vals.into_iter().enumerate() {
            w[(i, j)] = v;
        }
    }
    Ok(w)
}

#[derive(Serialize)]
struct AlignSummary {
    src_lang: String,
    tgt_lang: String,
    train_pairs: usize,
    test_pairs: usize,
    orthogonality_residual: f64,
    metric: String,
    test_accuracy_unaligned: Option<f64>,
    test_accuracy_aligned: Option<f64>,
}

pub fn align(args: &AlignArgs, cfg: &RunConfig) -> Result<()> {
    let mut out = Outputs::new(&args.out);
    let model = LoadedModel::load(&args.model, Some(&mut out))?;
    let data = Dataset::load(&args.data)?;
    for p in data.input_files(&args.data) {
        out.input(&p)?;
    }
    let mut links = oriented_links(&data.xlinks, &args.src_lang, &args.tgt_lang);
    if links.len() < 2 {
        bail!(kglm_core::Error::Validation(format!(
            "need at least 2 {}-{} links, found {}",
            args.src_lang,
            args.tgt_lang,
            links.len()
        )));
    }
    links.shuffle(&mut ChaCha8Rng::seed_from_u64(seed::derive(cfg.seed, seed::TAG_DATA, 10)));
    let n_train = ((cfg.align.train_fraction * links.len() as f64).round() as usize).clamp(1, links.len());
    let (train_links, test_links) = links.split_at(n_train);

    let params = &model.ckpt.params;
    let pooling = cfg.align.pooling;
    let items: Vec<(String, String)> = [&args.src_lang, &args.tgt_lang]
        .iter()
        .flat_map(|l| data.vocab.entities_of(l).map(move |e| ((*l).clone(), e.clone())))
        .collect();
    let space = EmbeddingSpace::build(params, &model.tok, &items, pooling, &model.ckpt.hash()?)?;
    let side = |ls: &[XLink], a: bool| -> Vec<String> {
        ls.iter().map(|l| if a { l.entity_a.clone() } else { l.entity_b.clone() }).collect()
    };
    let x = embed_all(params, &model.tok, &side(train_links, true), pooling)?;
    let y = embed_all(params, &model.tok, &side(train_links, false), pooling)?;
    let w = procrustes_align(&x, &y)?;
    let d = w.nrows();
    let residual = (w.t().dot(&w) - Array2::<f64>::eye(d)).iter().fold(0.0f64, |m, v| m.max(v.abs()));

    let metric: Metric = cfg.align.metric.into();
    let (mut before, mut after) = (None, None);
    if !test_links.is_empty() {
        let tgt = space.subset(&args.tgt_lang);
        let gold: Vec<usize> = test_links
            .iter()
            .map(|l| tgt.position(&args.tgt_lang, &l.entity_b).expect("embedded"))
            .collect();
        let q = embed_all(params, &model.tok, &side(test_links, true), pooling)?;
        before = Some(retrieval_accuracy(&retrieve(&q, &tgt, metric, 1, cfg.align.csls_k)?, &gold)?);
        after = Some(retrieval_accuracy(&retrieve(&apply_map(&w, &q), &tgt, metric, 1, cfg.align.csls_k)?, &gold)?);
    }
    out.add("embeddings.txt", space.to_text());
    out.add("map.txt", map_to_text(&w));
    out.add("train_links.tsv", format_xlinks(train_links));
    out.add("test_links.tsv", format_xlinks(test_links));
    let summary = AlignSummary {
        src_lang: args.src_lang.clone(),
        tgt_lang: args.tgt_lang.clone(),
        train_pairs: train_links.len(),
        test_pairs: test_links.len(),
        orthogonality_residual: residual,
        metric: format!("{:?}", cfg.align.metric).to_lowercase(),
        test_accuracy_unaligned: before,
        test_accuracy_aligned: after,
    };
    println!("{}", serde_json::to_string(&summary)?);
    out.add_json("align.json", &summary)?;
    out.commit("align", cfg)?;
    Ok(())
}

// retrieve -----------------------------------------------------------------

#[derive(Serialize)]
struct RetrievalRow<'a> {
    query: &'a str,
    rank: usize,
    entity: &'a str,
    score: f64,
}

pub fn retrieve_cmd(args: &RetrieveArgs, cfg: &RunConfig) -> Result<()> {
    let mut out = Outputs::new(&args.out);
    let space = EmbeddingSpace::load(&args.embeddings).with_context(|| format!("loading {}", args.embeddings.display()))?;
    out.input(&args.embeddings)?;
    let src = space.subset(&args.src_lang);
    let tgt = space.subset(&args.tgt_lang);
    if tgt.is_empty() {
        bail!(kglm_core::Error::Validation(format!("no {} entries in {}", args.tgt_lang, args.embeddings.display())));
    }
    let (queries, gold): (Vec<String>, Option<Vec<String>>) = match (&args.pairs, args.query.is_empty()) {
        (Some(p), true) => {
            out.input(p)?;
            let links = oriented_links(&parse_xlinks(p)?.to_vec(), &args.src_lang, &args.tgt_lang);
            (links.iter().map(|l| l.entity_a.clone()).collect(), Some(links.iter().map(|l| l.entity_b.clone()).collect()))
        }
        (None, false) => (args.query.clone(), None),
        _ => return Err(UsageError("give either --query or --pairs".into()).into()),
    };
    let mut q = Array2::zeros((queries.len(), space.dim));
    for (i, name) in queries.iter().enumerate() {
        let pos = src
            .position(&args.src_lang, name)
            .ok_or_else(|| kglm_core::Error::Validation(format!("{}:{name} is not in the embedding file", args.src_lang)))?;
        q.row_mut(i).assign(&ndarray::ArrayView1::from(&src.entries[pos].vector));
    }
    if let Some(map) = &args.map {
        out.input(map)?;
        let text = fs::read_to_string(map).with_context(|| format!("reading {}", map.display()))?;
        let w = map_from_text(&text, map)?;
        if w.nrows() != space.dim {
            bail!(kglm_core::Error::Validation(format!("map dim {} differs from space dim {}", w.nrows(), space.dim)));
        }
        q = apply_map(&w, &q);
    }
    let ranked = retrieve(&q, &tgt, cfg.align.metric.into(), cfg.align.top_n, cfg.align.csls_k)?;
    let mut rows = Vec::new();
    let mut text = String::new();
    for (name, list) in queries.iter().zip(&ranked) {
        for (r, &(i, s)) in list.iter().enumerate() {
            let entity = &tgt.entries[i].entity;
            let _ = writeln!(text, "{name}\t{}\t{entity}\t{s:.6}", r + 1);
            rows.push(RetrievalRow {
                query: name,
                rank: r + 1,
                entity,
                score: s,
            });
        }
    }
    print!("{text}");
    out.add("retrieval.jsonl", jsonl(&rows)?);
    if let Some(gold) = gold {
        let gold_idx: Vec<usize> = gold
            .iter()
            .map(|g| {
                tgt.position(&args.tgt_lang, g)
                    .ok_or_else(|| kglm_core::Error::Validation(format!("{}:{g} is not in the embedding file", args.tgt_lang)))
            })
            .collect::<std::result::Result<_, _>>()?;
        let acc = retrieval_accuracy(&ranked, &gold_idx)?;
        out.add_json("retrieval_summary.json", &serde_json::json!({"queries": queries.len(), "accuracy": acc}))?;
        eprintln!("top-1 accuracy {acc:.4} over {} queries", queries.len());
    }
    out.commit("retrieve", cfg)?;
    Ok(())
}

// baseline -----------------------------------------------------------------

pub fn baseline(args: &BaselineArgs, cfg: &RunConfig) -> Result<()> {
    let data = Dataset::load(&args.data)?;
    let mut out = Outputs::new(&args.out);
    for p in data.input_files(&args.data) {
        out.input(&p)?;
    }
    let kinds: Vec<KgeKind> = match &args.model {
        None => KgeKind::ALL.to_vec(),
        Some(name) => vec![name.parse().map_err(|e: String| UsageError(e))?],
    };
    let mut reports = Vec::new();
    for kind in kinds {
        let trained = train_kge(kind, &data.split, &cfg.kge)?;
        let report = lp_evaluate(&KgePredictor { model: &trained.model }, &data.split, &data.vocab, cfg.eval.filtered)?;
        out.add(&format!("{}.kge.txt", kind.name()), trained.model.to_text());
        out.add(
            &format!("{}.loss.jsonl", kind.name()),
            jsonl(trained.epoch_losses.iter().enumerate().map(|(e, l)| serde_json::json!({"epoch": e, "loss": l})))?,
        );
        reports.push(report);
    }
    print!("{}", render_table(&reports));
    report_outputs(&mut out, &reports)?;
    out.commit("baseline", cfg)?;
    Ok(())
}

// transfer-exp -------------------------------------------------------------

pub fn transfer(args: &TransferArgs, cfg: &RunConfig) -> Result<()> {
    let t = &cfg.transfer;
    let mut setup = LmSetup::small_kg();
    setup.train.epochs = cfg.train.epochs;
    setup.train.mask_mode = cfg.train.mask_mode;
    let exp = TransferConfig {
        n_entities: t.n_entities,
        n_relations: t.n_relations,
        eval_fraction: t.eval_fraction,
        withhold: !t.control,
        seeds: t.seeds.clone(),
        beam_k: cfg.decode.k,
        setup,
        ..TransferConfig::default()
    };
    let report = transfer_experiment(&exp)?;
    let mut out = Outputs::new(&args.out);
    let mut reports = report.all.clone();
    reports.extend(report.single.iter().cloned());
    let mut table = render_table(&reports);
    let _ = writeln!(
        table,
        "\nwithheld: {}  per-seed Hits@1(All) - Hits@1(Single): {:?}  mean: {:.4}",
        report.withhold, report.deltas, report.mean_delta
    );
    print!("{table}");
    out.add_json("transfer_config.json", &exp)?;
    out.add_json("transfer.json", &report)?;
    out.add("table.txt", table);
    out.commit("transfer-exp", cfg)?;
    Ok(())
}
