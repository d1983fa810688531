//! Property tests across module boundaries.

use std::collections::BTreeSet;

use nalgebra::DMatrix;
use ndarray::Array2;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use kglm_core::decode::{beam_predict, build_trie, exhaustive_score, LmModel};
use kglm_core::embed::{apply_map, cosine_matrix, csls, procrustes_align};
use kglm_core::eval::synthetic::{cyclic_kg, random_strings, syllable_name};
use kglm_core::eval::{evaluate_triples, mrr_from_ranks, hits_from_ranks, KgePredictor};
use kglm_core::kg::{build_vocab, FilterIndex, LpSplit, Triple, TripleSet};
use kglm_core::kge::{train_kge, KgeConfig, KgeKind};
use kglm_core::linearize::{linearize_triple, Fact, Predicate};
use kglm_core::model::{build_mask, forward, Dropout, MaskMode, ModelConfig, ModelParams};
use kglm_core::tokenizer::{Special, Tokenizer};
use kglm_core::train::{prepare, train, Checkpoint, RngState, Silent, TrainConfig};

fn tok_for(names: &[String], merges: usize) -> Tokenizer {
    Tokenizer::train(names, merges, &["en".to_string()]).unwrap()
}

fn tiny_model(vocab: usize, seed: u64) -> ModelParams {
    let mut cfg = ModelConfig::new(vocab);
    cfg.d_model = 8;
    cfg.n_heads = 2;
    cfg.n_layers = 1;
    cfg.ffn_dim = 16;
    cfg.max_len = 40;
    cfg.init_std = 0.5;
    ModelParams::init(&cfg, seed).unwrap()
}

fn distinct_names(n: usize, seed: u64) -> Vec<String> {
    let alphabet: Vec<char> = "abcde".chars().collect();
    let set: BTreeSet<String> = random_strings(n, 5, &alphabet, seed).into_iter().collect();
    set.into_iter().collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn trie_accepts_exactly_the_candidates(seed in 0u64..1000, merges in 0usize..12) {
        let names = distinct_names(40, seed);
        let tok = tok_for(&names, merges);
        let (cands, others) = names.split_at(names.len() / 2);
        let trie = build_trie(cands, &tok).unwrap();
        prop_assert_eq!(trie.num_entities(), cands.len());
        for (i, c) in cands.iter().enumerate() {
            let mut path = tok.encode(c);
            path.push(Special::Eos.id());
            prop_assert_eq!(trie.accepts(&path), Some(i));
            prop_assert_eq!(trie.accepts(&path[..path.len() - 1]), None);
        }
        for o in others {
            let mut path = tok.encode(o);
            path.push(Special::Eos.id());
            prop_assert_eq!(trie.accepts(&path), None);
        }
    }

    #[test]
    fn beam_losses_are_exact_and_bounded(seed in 0u64..1000, k in 1usize..6) {
        let names = distinct_names(12, seed);
        let tok = tok_for(&names, 3);
        let p = tiny_model(tok.vocab_size(), seed);
        let m = LmModel::new(&p, &tok, MaskMode::StrictPrefix);
        let trie = build_trie(&names, &tok).unwrap();
        let pred = Predicate::Relation(names[0].clone());
        let beam = beam_predict(&m, &names[1], &pred, &trie, k).unwrap();
        let ex = exhaustive_score(&m, &names[1], &pred, &names).unwrap();
        prop_assert!(beam.forward_count <= 1 + (trie.max_depth() - 1) * k);
        prop_assert!(beam.finite().count() >= 1);
        for (e, loss) in beam.finite() {
            let want = ex.loss_of(e);
            prop_assert!((loss - want).abs() <= 1e-9 * want.abs().max(1.0), "{} vs {}", loss, want);
        }
        let full = beam_predict(&m, &names[1], &pred, &trie, trie.num_nodes()).unwrap();
        prop_assert_eq!(full.finite().count(), names.len());
        prop_assert_eq!(full.top().map(|e| e.0), ex.top().map(|e| e.0));
    }

    #[test]
    fn strict_prefix_hides_the_object(seed in 0u64..1000) {
        let names = distinct_names(10, seed);
        let tok = tok_for(&names, 4);
        let p = tiny_model(tok.vocab_size(), seed + 1);
        let f = linearize_triple(&Triple::new("en", &names[0], &names[1], &names[2]), &tok, 40).unwrap();
        let mask = build_mask(&f, MaskMode::StrictPrefix);
        let base = forward(&p, &f.ids, &mask, Dropout::Off).unwrap().logits;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for t in f.object_region() {
            let mut ids = f.ids.clone();
            for id in &mut ids[t..] {
                *id = rng.gen_range(0..tok.vocab_size() as u32);
            }
            let pert = forward(&p, &ids, &mask, Dropout::Off).unwrap().logits;
            prop_assert_eq!(base.row(t - 1), pert.row(t - 1));
        }
    }

    #[test]
    fn mrr_is_bounded_by_hits(ranks in proptest::collection::vec(proptest::option::of(1usize..20), 1..40)) {
        let h1 = hits_from_ranks(&ranks, 1).unwrap();
        let h3 = hits_from_ranks(&ranks, 3).unwrap();
        let h10 = hits_from_ranks(&ranks, 10).unwrap();
        let mrr = mrr_from_ranks(&ranks);
        prop_assert!(h1 <= h3 && h3 <= h10);
        prop_assert!(mrr >= h1 - 1e-12);
        prop_assert!(mrr <= h1 + (1.0 - h1) / 2.0 + 1e-12);
    }

    #[test]
    fn procrustes_recovers_rotations(seed in 0u64..1000, dim in 2usize..8) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = DMatrix::from_fn(dim, dim, |_, _| rng.gen_range(-1.0..1.0));
        let q = m.qr().q();
        let w = Array2::from_shape_fn((dim, dim), |(i, j)| q[(i, j)]);
        let x = Array2::from_shape_fn((3 * dim, dim), |_| rng.gen_range(-1.0..1.0));
        let y = x.dot(&w);
        let fit = procrustes_align(&x, &y).unwrap();
        let err = (&apply_map(&fit, &x) - &y).iter().map(|v| v.abs()).fold(0.0, f64::max);
        prop_assert!(err < 1e-8, "max error {}", err);

        // Similarities are unchanged when both sides are rotated together.
        let a = cosine_matrix(&x, &x.dot(&w)).unwrap();
        let b = cosine_matrix(&x.dot(&w), &x.dot(&w).dot(&w)).unwrap();
        prop_assert!((&a - &b).iter().all(|v| v.abs() < 1e-9));
        let ca = csls(&x, &y, 3).unwrap();
        let cb = csls(&x.dot(&w), &y.dot(&w), 3).unwrap();
        prop_assert!((&ca - &cb).iter().all(|v| v.abs() < 1e-9));
    }
}

#[test]
fn length_filter_matches_brute_force() {
    let alphabet: Vec<char> = "abcdefgh".chars().collect();
    let names = random_strings(80, 12, &alphabet, 3);
    let tok = tok_for(&names, 5);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let facts: Vec<Fact> = (0..200)
        .map(|_| {
            let pick = |r: &mut ChaCha8Rng| names[r.gen_range(0..names.len())].clone();
            Fact::Triple(Triple::new("en", &pick(&mut rng), &pick(&mut rng), &pick(&mut rng)))
        })
        .collect();
    for max_len in [12, 18, 24, 30] {
        let data = prepare(&facts, &tok, max_len).unwrap();
        let expected = facts
            .iter()
            .filter(|f| {
                let Fact::Triple(t) = f else { unreachable!() };
                // Ten markers plus the three encoded fields.
                let n = 10 + [&t.subject, &t.relation, &t.object].iter().map(|s| tok.encode(s).len()).sum::<usize>();
                n < max_len
            })
            .count();
        assert_eq!(data.facts.len(), expected, "max_len {max_len}");
        assert_eq!(data.dropped, facts.len() - expected);
        assert!(data.facts.iter().all(|f| f.len() < max_len));
    }
}

fn train_once(seed: u64) -> (ModelParams, Vec<f64>) {
    let names = distinct_names(20, 1);
    let tok = tok_for(&names, 3);
    let facts: Vec<Fact> = names
        .windows(3)
        .map(|w| Fact::Triple(Triple::new("en", &w[0], &w[1], &w[2])))
        .collect();
    let data = prepare(&facts, &tok, 40).unwrap();
    let cfg = TrainConfig {
        epochs: 2,
        batch_size: 4,
        dropout: 0.1,
        seed,
        max_len: 40,
        ..TrainConfig::default()
    };
    let mut mc = tiny_model(tok.vocab_size(), seed).config;
    mc.dropout = 0.1;
    let p = ModelParams::init(&mc, seed).unwrap();
    let out = train(&cfg, p, &data, &mut Silent).unwrap();
    let losses = out.log.iter().map(|r| r.loss).collect();
    (out.params, losses)
}

#[test]
fn training_is_deterministic_per_seed() {
    let (a, la) = train_once(7);
    let (b, lb) = train_once(7);
    let (c, _) = train_once(8);
    assert_eq!(la.iter().map(|x| x.to_bits()).collect::<Vec<_>>(), lb.iter().map(|x| x.to_bits()).collect::<Vec<_>>());
    for ((_, x), (_, y)) in a.slices().into_iter().zip(b.slices()) {
        assert!(x.iter().zip(y).all(|(u, v)| u.to_bits() == v.to_bits()));
    }
    assert_ne!(a.slices()[0].1, c.slices()[0].1);
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let (p, _) = train_once(3);
    let ckpt = Checkpoint {
        params: p,
        tokenizer_hash: "abc".into(),
        train_config: Some(TrainConfig::default()),
        step: 12,
        rng: RngState { seed: 3, step: 12 },
        adam: None,
    };
    let bytes = ckpt.to_bytes().unwrap();
    let back = Checkpoint::from_bytes(&bytes).unwrap();
    assert_eq!(back.to_bytes().unwrap(), bytes);
    assert_eq!(back.step, 12);
    for ((n, x), (m, y)) in ckpt.params.slices().into_iter().zip(back.params.slices()) {
        assert_eq!(n, m);
        assert!(x.iter().zip(y).all(|(u, v)| u.to_bits() == v.to_bits()));
    }
    let mut bad = bytes.clone();
    let last = bad.len() - 40;
    bad[last] ^= 1;
    assert!(Checkpoint::from_bytes(&bad).is_err());
}

#[test]
fn filtered_ranks_never_exceed_unfiltered() {
    let triples = cyclic_kg(15, 3, "en", syllable_name);
    let set = TripleSet::from_records(triples.clone());
    let test: Vec<Triple> = triples.iter().step_by(5).cloned().collect();
    let train_part: Vec<Triple> = set.iter().filter(|t| !test.contains(t)).cloned().collect();
    let split = LpSplit {
        train: train_part,
        test: test.clone(),
        removed: Vec::new(),
        seed: 0,
        ratio: 0.2,
    };
    let vocab = build_vocab(split.all_triples(), &[]);
    let cfg = KgeConfig {
        dim: 8,
        epochs: 20,
        ..KgeConfig::default()
    };
    for kind in [KgeKind::TransE, KgeKind::ComplEx, KgeKind::RotatE] {
        let model = train_kge(kind, &split, &cfg).unwrap().model;
        let pred = KgePredictor { model: &model };
        let index = FilterIndex::from_split(&split, &vocab);
        let filt = evaluate_triples(&pred, &test, &index, true).unwrap();
        let raw = evaluate_triples(&pred, &test, &index, false).unwrap();
        for (f, r) in filt.queries.iter().zip(&raw.queries) {
            assert_eq!((&f.subject, &f.relation), (&r.subject, &r.relation));
            assert!(f.rank.unwrap() <= r.rank.unwrap(), "{kind:?}: {:?} > {:?}", f.rank, r.rank);
        }
        assert!(filt.avg.hits10 >= raw.avg.hits10);
    }
}
