//! Shared fixtures for the benchmarks.

use kglm_core::eval::synthetic::random_kg;
use kglm_core::eval::tokenizer_for;
use kglm_core::kg::{build_vocab, Triple};
use kglm_core::linearize::{linearize_triple, LinearizedFact};
use kglm_core::model::{ModelConfig, ModelParams};
use kglm_core::tokenizer::Tokenizer;

pub struct Fixture {
    pub triples: Vec<Triple>,
    pub entities: Vec<String>,
    pub tok: Tokenizer,
    pub params: ModelParams,
    pub facts: Vec<LinearizedFact>,
}

/// Random 100-entity KG with an untrained model of width `d_model`.
pub fn fixture(d_model: usize) -> Fixture {
    let triples = random_kg(100, 5, "en", 1);
    let vocab = build_vocab(&triples, &[]);
    let tok = tokenizer_for(&vocab, 10).expect("tokenizer");
    let mut cfg = ModelConfig::new(tok.vocab_size());
    cfg.d_model = d_model;
    cfg.ffn_dim = 4 * d_model;
    let params = ModelParams::init(&cfg, 0).expect("params");
    let facts = triples
        .iter()
        .map(|t| linearize_triple(t, &tok, cfg.max_len).expect("fits"))
        .collect();
    Fixture {
        entities: vocab.entities_of("en").cloned().collect(),
        triples,
        tok,
        params,
        facts,
    }
}
