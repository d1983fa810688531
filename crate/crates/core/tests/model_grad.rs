mod common;

use kglm_core::kg::Triple;
use kglm_core::linearize::linearize_triple;
use kglm_core::model::{grad, MaskMode, ModelConfig, ModelParams};
use kglm_core::tokenizer::Tokenizer;

fn tiny_setup(tie: bool) -> (ModelParams, Vec<kglm_core::linearize::LinearizedFact>) {
    let corpus: Vec<String> = ["ab", "ba", "r", "q"].iter().map(|s| s.to_string()).collect();
    let tok = Tokenizer::train(&corpus, 0, &["en".into()]).unwrap();
    let batch = vec![
        linearize_triple(&Triple::new("en", "ab", "r", "ba"), &tok, 30).unwrap(),
        linearize_triple(&Triple::new("en", "b", "q", "a"), &tok, 30).unwrap(),
    ];
    let mut cfg = ModelConfig::new(tok.vocab_size());
    cfg.d_model = 8;
    cfg.n_heads = 2;
    cfg.n_layers = 1;
    cfg.ffn_dim = 16;
    cfg.max_len = 16;
    cfg.init_std = 0.3;
    cfg.tie_output = tie;
    (ModelParams::init(&cfg, 5).unwrap(), batch)
}

fn check(mode: MaskMode, tie: bool) {
    let (p, batch) = tiny_setup(tie);
    let (_, analytic) = grad(&p, &batch, mode, None).unwrap();
    let numeric = common::finite_difference_grad(&p, &batch, mode, 1e-5);
    for ((name, a), (_, n)) in analytic.slices().into_iter().zip(&numeric) {
        let err = common::relative_error(a, n);
        assert!(err < 1e-4, "{mode:?} tie={tie} {name}: relative error {err:e}");
    }
}

#[test]
fn gradients_match_finite_differences_strict_prefix() {
    check(MaskMode::StrictPrefix, false);
}

#[test]
fn gradients_match_finite_differences_span_causal() {
    check(MaskMode::SpanCausal, false);
}

#[test]
fn gradients_match_finite_differences_tied_output() {
    check(MaskMode::StrictPrefix, true);
}

#[test]
fn unused_vocabulary_rows_get_zero_gradient() {
    let (p, batch) = tiny_setup(false);
    let (_, g) = grad(&p, &batch, MaskMode::StrictPrefix, None).unwrap();
    let used: std::collections::HashSet<u32> = batch.iter().flat_map(|f| f.ids.iter().copied()).collect();
    for id in 0..p.config.vocab_size as u32 {
        if !used.contains(&id) {
            assert!(g.tok_emb.row(id as usize).iter().all(|&x| x == 0.0), "row {id}");
        }
    }
}
