//! Link prediction by constrained beam search over an entity trie, and the
//! exhaustive scorer it approximates.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::sync::atomic::{AtomicUsize, Ordering as AtomicOrdering};

use ndarray::s;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linearize::{linearize_parts, linearize_prefix, Predicate, Prefix};
use crate::model::{
    build_mask, build_mask_for, forward_hidden, lm_loss, log_softmax_row, Dropout, MaskMode, ModelParams,
};
use crate::tokenizer::{Special, TokenId, Tokenizer};

pub const DEFAULT_BEAM_WIDTH: usize = 50;

#[derive(Debug, Clone, Default)]
struct TrieNode {
    children: BTreeMap<TokenId, usize>,
    entity: Option<usize>,
    /// Depth of the shallowest terminal at or below this node, counted from the root.
    min_terminal_depth: usize,
}

/// Prefix tree over `encode(entity) + [EOS]`. Entity ids are indices into the
/// candidate list it was built from.
#[derive(Debug, Clone)]
pub struct EntityTrie {
    nodes: Vec<TrieNode>,
    entities: Vec<String>,
    max_depth: usize,
}

impl EntityTrie {
    pub const ROOT: usize = 0;

    /// Builds the trie. Two candidates with the same tokenization are an error.
    pub fn build(candidates: &[String], tok: &Tokenizer) -> Result<Self> {
        if candidates.is_empty() {
            return Err(Error::InvalidArgument("empty candidate set".into()));
        }
        let mut nodes = vec![TrieNode::default()];
        let mut max_depth = 0;
        for (e, name) in candidates.iter().enumerate() {
            let mut path = tok.encode(name);
            if path.is_empty() {
                return Err(Error::Validation(format!("candidate {name:?} encodes to nothing")));
            }
            path.push(Special::Eos.id());
            max_depth = max_depth.max(path.len());
            let mut cur = Self::ROOT;
            for &id in &path {
                cur = match nodes[cur].children.get(&id) {
                    Some(&n) => n,
                    None => {
                        nodes.push(TrieNode::default());
                        let n = nodes.len() - 1;
                        nodes[cur].children.insert(id, n);
                        n
                    }
                };
            }
            if let Some(other) = nodes[cur].entity {
                return Err(Error::Validation(format!(
                    "candidates {:?} and {name:?} have the same tokenization",
                    candidates[other]
                )));
            }
            nodes[cur].entity = Some(e);
        }
        let mut trie = EntityTrie {
            nodes,
            entities: candidates.to_vec(),
            max_depth,
        };
        trie.fill_min_depth(Self::ROOT, 0);
        Ok(trie)
    }

    fn fill_min_depth(&mut self, node: usize, depth: usize) -> usize {
        let mut best = if self.nodes[node].entity.is_some() { depth } else { usize::MAX };
        let children: Vec<usize> = self.nodes[node].children.values().copied().collect();
        for c in children {
            best = best.min(self.fill_min_depth(c, depth + 1));
        }
        self.nodes[node].min_terminal_depth = best;
        best
    }

    /// Maximum path length `L`, counting `[EOS]`.
    pub fn max_depth(&self) -> usize {
        self.max_depth
    }

    pub fn num_entities(&self) -> usize {
        self.entities.len()
    }

    pub fn entity(&self, id: usize) -> &str {
        &self.entities[id]
    }

    pub fn entities(&self) -> &[String] {
        &self.entities
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn children(&self, node: usize) -> impl Iterator<Item = (TokenId, usize)> + '_ {
        self.nodes[node].children.iter().map(|(&t, &n)| (t, n))
    }

    pub fn terminal(&self, node: usize) -> Option<usize> {
        self.nodes[node].entity
    }

    /// Entity whose full path (including `[EOS]`) is `ids`.
    pub fn accepts(&self, ids: &[TokenId]) -> Option<usize> {
        let mut cur = Self::ROOT;
        for id in ids {
            cur = *self.nodes[cur].children.get(id)?;
        }
        self.nodes[cur].entity
    }

    /// Every accepted path with its entity id, in token order.
    pub fn paths(&self) -> Vec<(Vec<TokenId>, usize)> {
        let mut out = Vec::new();
        let mut stack = vec![(Self::ROOT, Vec::new())];
        while let Some((n, path)) = stack.pop() {
            if let Some(e) = self.nodes[n].entity {
                out.push((path.clone(), e));
            }
            for (&t, &c) in self.nodes[n].children.iter().rev() {
                let mut p = path.clone();
                p.push(t);
                stack.push((c, p));
            }
        }
        out
    }
}

pub fn build_trie(candidates: &[String], tok: &Tokenizer) -> Result<EntityTrie> {
    EntityTrie::build(candidates, tok)
}

/// A trained model bundled with what is needed to query it.
#[derive(Clone, Copy)]
pub struct LmModel<'a> {
    pub params: &'a ModelParams,
    pub tok: &'a Tokenizer,
    pub mask_mode: MaskMode,
    /// Sequences of this length or longer are not scored, as in training.
    pub max_len: usize,
}

impl<'a> LmModel<'a> {
    pub fn new(params: &'a ModelParams, tok: &'a Tokenizer, mask_mode: MaskMode) -> Self {
        LmModel {
            params,
            tok,
            mask_mode,
            max_len: params.config.max_len,
        }
    }
}

/// Partial object sequence during beam search.
#[derive(Debug, Clone, PartialEq)]
pub struct BeamHypothesis {
    pub ids: Vec<TokenId>,
    pub loss: f64,
    /// Trie node reached by `ids`.
    pub node: usize,
}

/// Candidates ordered by ascending loss; unreached candidates carry `+inf`.
#[derive(Debug, Clone, PartialEq)]
pub struct Ranking {
    pub entries: Vec<(usize, f64)>,
    pub forward_count: usize,
}

impl Ranking {
    fn from_losses(losses: Vec<f64>, forward_count: usize) -> Self {
        let mut entries: Vec<(usize, f64)> = losses.into_iter().enumerate().collect();
        entries.sort_by(|a, b| cmp_loss(a.1, b.1).then(a.0.cmp(&b.0)));
        Ranking {
            entries,
            forward_count,
        }
    }

    /// 1-based rank of `entity` if its loss is finite.
    pub fn rank_of(&self, entity: usize) -> Option<usize> {
        self.entries
            .iter()
            .position(|&(e, l)| e == entity && l.is_finite())
            .map(|p| p + 1)
    }

    pub fn top(&self) -> Option<(usize, f64)> {
        self.entries.first().copied().filter(|e| e.1.is_finite())
    }

    pub fn finite(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.entries.iter().copied().filter(|e| e.1.is_finite())
    }

    pub fn loss_of(&self, entity: usize) -> f64 {
        self.entries
            .iter()
            .find(|e| e.0 == entity)
            .map_or(f64::INFINITY, |e| e.1)
    }
}

fn cmp_loss(a: f64, b: f64) -> Ordering {
    a.partial_cmp(&b).unwrap_or(Ordering::Equal)
}

/// Log-probabilities of the next token after `prefix ++ object`.
fn next_token_logprobs(model: &LmModel<'_>, prefix: &Prefix, object: &[TokenId]) -> Result<ndarray::Array1<f64>> {
    let mut ids = prefix.ids.clone();
    ids.extend_from_slice(object);
    let os = prefix.object_start();
    let mask = build_mask_for(ids.len(), os, os + 1..ids.len() + 1, model.mask_mode);
    let (hidden, _) = forward_hidden(model.params, &ids, &mask, Dropout::Off)?;
    let last = hidden.slice(s![ids.len() - 1..ids.len(), ..]);
    let logits = last.dot(&model.params.output_projection());
    Ok(log_softmax_row(logits.row(0)))
}

/// Constrained beam search: at each depth every kept hypothesis is extended
/// by its trie children, the `k` cheapest extensions are kept, and those that
/// end in `[EOS]` are completed. Uses at most `1 + (L-1)·k` forward passes.
pub fn beam_predict(
    model: &LmModel<'_>,
    subject: &str,
    predicate: &Predicate,
    trie: &EntityTrie,
    k: usize,
) -> Result<Ranking> {
    if k == 0 {
        return Err(Error::InvalidArgument("beam width must be at least 1".into()));
    }
    let prefix = linearize_prefix(model.tok, subject, predicate, model.max_len)?;
    // Full sequence is prefix + path + `</s>`; it must stay below max_len.
    let fits = |depth: usize| prefix.ids.len() + depth + 1 < model.max_len;
    let forwards = AtomicUsize::new(0);
    let mut finished = vec![f64::INFINITY; trie.num_entities()];
    let mut beam = vec![BeamHypothesis {
        ids: Vec::new(),
        loss: 0.0,
        node: EntityTrie::ROOT,
    }];
    for _depth in 1..=trie.max_depth() {
        if beam.is_empty() {
            break;
        }
        let expanded: Vec<Vec<BeamHypothesis>> = beam
            .par_iter()
            .map(|h| {
                forwards.fetch_add(1, AtomicOrdering::Relaxed);
                let lp = next_token_logprobs(model, &prefix, &h.ids)?;
                Ok(trie
                    .children(h.node)
                    .filter(|&(_, c)| fits(trie.nodes[c].min_terminal_depth))
                    .map(|(t, c)| {
                        let mut ids = h.ids.clone();
                        ids.push(t);
                        BeamHypothesis {
                            ids,
                            loss: h.loss - lp[t as usize],
                            node: c,
                        }
                    })
                    .collect())
            })
            .collect::<Result<_>>()?;
        let mut cands: Vec<BeamHypothesis> = expanded.into_iter().flatten().collect();
        cands.sort_by(|a, b| cmp_loss(a.loss, b.loss).then_with(|| a.ids.cmp(&b.ids)));
        cands.truncate(k);
        beam = Vec::with_capacity(cands.len());
        for c in cands {
            match trie.terminal(c.node) {
                Some(e) if fits(c.ids.len()) => finished[e] = c.loss,
                Some(_) => {}
                None => beam.push(c),
            }
        }
    }
    Ok(Ranking::from_losses(finished, forwards.into_inner()))
}

/// Scores every candidate by the object-span loss of its full linearization.
/// Candidates whose sequence would reach `max_len` get `+inf`.
pub fn exhaustive_score(
    model: &LmModel<'_>,
    subject: &str,
    predicate: &Predicate,
    candidates: &[String],
) -> Result<Ranking> {
    linearize_prefix(model.tok, subject, predicate, model.max_len)?;
    let forwards = AtomicUsize::new(0);
    let losses: Vec<f64> = candidates
        .par_iter()
        .map(|o| {
            let f = match linearize_parts(model.tok, subject, predicate, o, model.max_len) {
                Ok(f) => f,
                Err(Error::TooLong { .. }) => return Ok(f64::INFINITY),
                Err(e) => return Err(e),
            };
            forwards.fetch_add(1, AtomicOrdering::Relaxed);
            let mask = build_mask(&f, model.mask_mode);
            let (hidden, _) = forward_hidden(model.params, &f.ids, &mask, Dropout::Off)?;
            let logits = hidden.dot(&model.params.output_projection());
            lm_loss(&logits, &f)
        })
        .collect::<Result<_>>()?;
    Ok(Ranking::from_losses(losses, forwards.into_inner()))
}
