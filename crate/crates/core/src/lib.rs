//! Causal language modelling over linearized multilingual knowledge-graph
//! facts, with trie-constrained link prediction, embedding retrieval and
//! classical KGE baselines.

pub mod decode;
pub mod embed;
pub mod error;
pub mod eval;
pub mod kg;
pub mod kge;
pub mod linearize;
pub mod model;
pub mod seed;
pub mod tokenizer;
pub mod train;

pub use error::{Error, Result};
