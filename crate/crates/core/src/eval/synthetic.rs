//! Deterministic synthetic knowledge graphs with known ground truth.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::kg::{Triple, XLink};
use crate::seed;

const SYLLABLES: [&str; 16] = [
    "ba", "ko", "mi", "ru", "te", "la", "no", "vi", "sa", "du", "fe", "ga", "pi", "zo", "he", "ju",
];

/// Distinct pronounceable name for each index.
pub fn syllable_name(i: usize) -> String {
    let s = SYLLABLES.len();
    let mut out = String::new();
    let mut n = i;
    for _ in 0..2 {
        out.push_str(SYLLABLES[n % s]);
        n /= s;
    }
    while n > 0 {
        out.push_str(SYLLABLES[n % s]);
        n /= s;
    }
    out
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_uppercase().collect::<String>() + c.as_str(),
        None => String::new(),
    }
}

/// Every `(subject, rel_k)` gets one uniformly random object.
pub fn random_kg(n_entities: usize, n_relations: usize, lang: &str, seed: u64) -> Vec<Triple> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(seed, seed::TAG_DATA, 0));
    let names: Vec<String> = (0..n_entities).map(syllable_name).collect();
    let mut out = Vec::with_capacity(n_entities * n_relations);
    for s in &names {
        for k in 0..n_relations {
            let o = &names[rng.gen_range(0..n_entities)];
            out.push(Triple::new(lang, s, &format!("rel_{k}"), o));
        }
    }
    out
}

/// `rel_k: e_i → e_(i+k mod n)` for `k = 1..=n_relations`.
pub fn cyclic_kg(n: usize, n_relations: usize, lang: &str, name: impl Fn(usize) -> String) -> Vec<Triple> {
    (0..n)
        .flat_map(|i| (1..=n_relations).map(move |k| (i, k)))
        .map(|(i, k)| Triple::new(lang, &name(i), &format!("rel_{k}"), &name((i + k) % n)))
        .collect()
}

/// Two pseudo-languages with mirrored cyclic structure plus links between
/// counterparts.
#[derive(Debug, Clone)]
pub struct BilingualKg {
    pub a: Vec<Triple>,
    pub b: Vec<Triple>,
    pub xlinks: Vec<XLink>,
}

pub fn bilingual_kg(n: usize, n_relations: usize, lang_a: &str, lang_b: &str) -> BilingualKg {
    let na = |i: usize| format!("xA_{i}");
    let nb = |i: usize| format!("xB_{i}");
    BilingualKg {
        a: cyclic_kg(n, n_relations, lang_a, na),
        b: cyclic_kg(n, n_relations, lang_b, nb),
        xlinks: (0..n).map(|i| XLink::new(lang_a, &na(i), lang_b, &nb(i))).collect(),
    }
}

/// Subjects `"<stem> <suffix>"` whose object is fixed by the suffix and the
/// relation, so a model can answer for stems it never saw.
#[derive(Debug, Clone)]
pub struct CompositionalKg {
    pub train: Vec<Triple>,
    /// Triples whose subjects never occur in `train`.
    pub unseen: Vec<Triple>,
}

#[derive(Debug, Clone)]
pub struct CompositionalConfig {
    pub lang: String,
    pub n_train_subjects: usize,
    pub n_unseen_subjects: usize,
    pub n_suffixes: usize,
    pub n_relations: usize,
    pub seed: u64,
}

impl Default for CompositionalConfig {
    fn default() -> Self {
        CompositionalConfig {
            lang: "en".into(),
            n_train_subjects: 80,
            n_unseen_subjects: 20,
            n_suffixes: 8,
            n_relations: 3,
            seed: 0,
        }
    }
}

const SUFFIXES: [&str; 12] = ["tak", "nel", "ros", "lum", "kip", "pow", "sed", "daf", "fur", "gin", "mox", "wye"];

pub fn compositional_kg(cfg: &CompositionalConfig) -> CompositionalKg {
    let n_suffixes = cfg.n_suffixes.min(SUFFIXES.len());
    let n_stems = cfg.n_train_subjects + cfg.n_unseen_subjects;
    let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(cfg.seed, seed::TAG_DATA, 1));
    let mut stems: Vec<usize> = (0..SYLLABLES.len().pow(2)).collect();
    stems.shuffle(&mut rng);
    let objects = |suffix: usize, k: usize| capitalize(&syllable_name(300 + suffix * cfg.n_relations + k));
    let mut train = Vec::new();
    let mut unseen = Vec::new();
    for (n, &stem) in stems.iter().take(n_stems).enumerate() {
        let suffix = rng.gen_range(0..n_suffixes);
        let subject = format!("{} {}", syllable_name(stem), SUFFIXES[suffix]);
        let target = if n < cfg.n_train_subjects { &mut train } else { &mut unseen };
        for k in 0..cfg.n_relations {
            target.push(Triple::new(&cfg.lang, &subject, &format!("rel_{k}"), &objects(suffix, k)));
        }
    }
    CompositionalKg { train, unseen }
}

/// `n` distinct random lowercase strings of length 1..=max_len over `alphabet`.
pub fn random_strings(n: usize, max_len: usize, alphabet: &[char], seed: u64) -> Vec<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(seed, seed::TAG_DATA, 2));
    let mut set = std::collections::BTreeSet::new();
    while set.len() < n {
        let len = rng.gen_range(1..=max_len);
        let s: String = (0..len).map(|_| alphabet[rng.gen_range(0..alphabet.len())]).collect();
        set.insert(s);
    }
    let mut v: Vec<String> = set.into_iter().collect();
    v.shuffle(&mut rng);
    v
}
