//! Byte-pair-encoding subword tokenizer with reserved special tokens.
//!
//! Spaces are rewritten to the boundary marker `▁`, which is attached to the
//! last character of each word (`"ab cd"` → `a b▁ c d▁`). Merges never cross a
//! marker, so decoding is a plain concatenation followed by marker removal.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};
use unicode_normalization::UnicodeNormalization;

use crate::error::{Error, Result};

pub type TokenId = u32;

pub const WORD_END: char = '\u{2581}';
const HEADER: &str = "kglm-tokenizer 1";

/// Fixed special tokens; language tokens follow them in the id space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Special {
    Unk,
    Bos,
    Sep,
    Subject,
    Predicate,
    Object,
    Eos,
}

impl Special {
    pub const ALL: [Special; 7] = [
        Special::Unk,
        Special::Bos,
        Special::Sep,
        Special::Subject,
        Special::Predicate,
        Special::Object,
        Special::Eos,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Special::Unk => "<unk>",
            Special::Bos => "<s>",
            Special::Sep => "</s>",
            Special::Subject => "[S]",
            Special::Predicate => "[P]",
            Special::Object => "[O]",
            Special::Eos => "[EOS]",
        }
    }

    pub fn id(self) -> TokenId {
        self as TokenId
    }
}

pub fn lang_token_name(code: &str) -> String {
    format!("[LAN_{code}]")
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Tokenizer {
    languages: Vec<String>,
    alphabet: Vec<String>,
    merges: Vec<(String, String)>,
    merge_rank: HashMap<(String, String), usize>,
    /// id → rendered string (special names included).
    pieces: Vec<String>,
    /// Regular symbols only; specials live outside this map.
    symbol_ids: HashMap<String, TokenId>,
    n_special: usize,
}

/// Splits NFC text into words of base symbols.
fn words_of(text: &str) -> Vec<Vec<String>> {
    if text.is_empty() {
        return Vec::new();
    }
    let mut marked: Vec<char> = text.chars().map(|c| if c == ' ' { WORD_END } else { c }).collect();
    marked.push(WORD_END);

    let mut words = Vec::new();
    let mut cur: Vec<char> = Vec::new();
    for c in marked {
        cur.push(c);
        if c == WORD_END {
            let mut syms: Vec<String> = Vec::with_capacity(cur.len());
            if cur.len() == 1 {
                syms.push(WORD_END.to_string());
            } else {
                let n = cur.len();
                for &ch in &cur[..n - 2] {
                    syms.push(ch.to_string());
                }
                syms.push([cur[n - 2], WORD_END].iter().collect());
            }
            words.push(syms);
            cur.clear();
        }
    }
    words
}

fn apply_merge(word: &mut Vec<String>, a: &str, b: &str) {
    let mut i = 0;
    while i + 1 < word.len() {
        if word[i] == a && word[i + 1] == b {
            let merged = format!("{a}{b}");
            word[i] = merged;
            word.remove(i + 1);
        }
        i += 1;
    }
}

impl Tokenizer {
    /// Learns `merges` merge rules from `corpus`. Pair-frequency ties are
    /// broken by the lexicographically smallest pair.
    pub fn train(corpus: &[String], merges: usize, languages: &[String]) -> Result<Self> {
        if corpus.is_empty() {
            return Err(Error::InvalidArgument("empty tokenizer corpus".into()));
        }
        let mut word_counts: BTreeMap<Vec<String>, usize> = BTreeMap::new();
        for s in corpus {
            if s.contains(['\t', '\n', WORD_END]) {
                return Err(Error::InvalidArgument(format!(
                    "corpus string {s:?} contains a reserved character"
                )));
            }
            let norm: String = s.nfc().collect();
            for w in words_of(&norm) {
                *word_counts.entry(w).or_default() += 1;
            }
        }
        let alphabet: BTreeSet<String> = word_counts.keys().flatten().cloned().collect();

        let mut words: Vec<(Vec<String>, usize)> = word_counts.into_iter().collect();
        let mut learned = Vec::with_capacity(merges);
        for _ in 0..merges {
            let mut pair_counts: HashMap<(&str, &str), usize> = HashMap::new();
            for (w, c) in &words {
                for pair in w.windows(2) {
                    *pair_counts.entry((pair[0].as_str(), pair[1].as_str())).or_default() += c;
                }
            }
            let best = pair_counts
                .into_iter()
                .max_by(|(pa, ca), (pb, cb)| ca.cmp(cb).then_with(|| pb.cmp(pa)));
            let Some(((a, b), _)) = best else { break };
            let (a, b) = (a.to_owned(), b.to_owned());
            for (w, _) in &mut words {
                apply_merge(w, &a, &b);
            }
            learned.push((a, b));
        }

        let mut languages: Vec<String> = languages.to_vec();
        languages.sort();
        languages.dedup();
        Ok(Self::assemble(languages, alphabet.into_iter().collect(), learned))
    }

    fn assemble(languages: Vec<String>, alphabet: Vec<String>, merges: Vec<(String, String)>) -> Self {
        let mut pieces: Vec<String> = Special::ALL.iter().map(|s| s.name().to_owned()).collect();
        pieces.extend(languages.iter().map(|l| lang_token_name(l)));
        let n_special = pieces.len();

        let mut symbol_ids = HashMap::new();
        let regular = alphabet
            .iter()
            .cloned()
            .chain(merges.iter().map(|(a, b)| format!("{a}{b}")));
        for sym in regular {
            if !symbol_ids.contains_key(&sym) {
                symbol_ids.insert(sym.clone(), pieces.len() as TokenId);
                pieces.push(sym);
            }
        }
        let merge_rank = merges
            .iter()
            .enumerate()
            .map(|(i, m)| (m.clone(), i))
            .collect();
        Tokenizer {
            languages,
            alphabet,
            merges,
            merge_rank,
            pieces,
            symbol_ids,
            n_special,
        }
    }

    pub fn vocab_size(&self) -> usize {
        self.pieces.len()
    }

    pub fn languages(&self) -> &[String] {
        &self.languages
    }

    pub fn merges(&self) -> &[(String, String)] {
        &self.merges
    }

    pub fn is_special(&self, id: TokenId) -> bool {
        (id as usize) < self.n_special
    }

    pub fn lang_token(&self, code: &str) -> Result<TokenId> {
        self.languages
            .binary_search_by(|l| l.as_str().cmp(code))
            .map(|i| (Special::ALL.len() + i) as TokenId)
            .map_err(|_| Error::UnknownLanguage(code.to_owned()))
    }

    pub fn piece(&self, id: TokenId) -> Result<&str> {
        self.pieces
            .get(id as usize)
            .map(String::as_str)
            .ok_or(Error::TokenOutOfRange {
                id,
                size: self.pieces.len(),
            })
    }

    /// Encodes NFC-normalized text; characters outside the alphabet map to `<unk>`.
    pub fn encode(&self, text: &str) -> Vec<TokenId> {
        let norm: String = text.nfc().collect();
        let mut ids = Vec::new();
        for mut word in words_of(&norm) {
            loop {
                let best = word
                    .windows(2)
                    .filter_map(|p| self.merge_rank.get(&(p[0].clone(), p[1].clone())).copied())
                    .min();
                let Some(rank) = best else { break };
                let (a, b) = &self.merges[rank];
                apply_merge(&mut word, a, b);
            }
            ids.extend(
                word.iter()
                    .map(|s| self.symbol_ids.get(s).copied().unwrap_or(Special::Unk.id())),
            );
        }
        ids
    }

    /// Decodes ids; special tokens render as their bracketed names.
    pub fn decode(&self, ids: &[TokenId]) -> Result<String> {
        let mut out = String::new();
        let mut run = String::new();
        let flush = |run: &mut String, out: &mut String| {
            if let Some(stripped) = run.strip_suffix(WORD_END) {
                run.truncate(stripped.len());
            }
            out.extend(run.chars().map(|c| if c == WORD_END { ' ' } else { c }));
            run.clear();
        };
        for &id in ids {
            let piece = self.piece(id)?;
            if self.is_special(id) {
                flush(&mut run, &mut out);
                out.push_str(piece);
            } else {
                run.push_str(piece);
            }
        }
        flush(&mut run, &mut out);
        Ok(out)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{HEADER}");
        let _ = writeln!(s, "languages {}", self.languages.len());
        for l in &self.languages {
            let _ = writeln!(s, "{l}");
        }
        let _ = writeln!(s, "alphabet {}", self.alphabet.len());
        for a in &self.alphabet {
            let _ = writeln!(s, "{a}");
        }
        let _ = writeln!(s, "merges {}", self.merges.len());
        for (a, b) in &self.merges {
            let _ = writeln!(s, "{a} {b}");
        }
        let _ = writeln!(s, "specials {}", self.n_special);
        for (i, p) in self.pieces[..self.n_special].iter().enumerate() {
            let _ = writeln!(s, "{i}\t{p}");
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let bad = |m: &str| Error::Validation(format!("tokenizer file: {m}"));
        let mut lines = text.lines();
        if lines.next() != Some(HEADER) {
            return Err(bad("missing or unsupported header"));
        }
        let mut section = |name: &str| -> Result<Vec<String>> {
            let head = lines.next().ok_or_else(|| bad("truncated"))?;
            let n: usize = head
                .strip_prefix(name)
                .and_then(|r| r.trim().parse().ok())
                .ok_or_else(|| bad(&format!("expected section {name}")))?;
            (0..n)
                .map(|_| lines.next().map(str::to_owned).ok_or_else(|| bad("truncated")))
                .collect()
        };
        let languages = section("languages")?;
        let alphabet = section("alphabet")?;
        let merges = section("merges")?
            .into_iter()
            .map(|l| {
                l.split_once(' ')
                    .map(|(a, b)| (a.to_owned(), b.to_owned()))
                    .ok_or_else(|| bad("malformed merge"))
            })
            .collect::<Result<Vec<_>>>()?;
        let specials = section("specials")?;
        let tok = Self::assemble(languages, alphabet, merges);
        let expected: Vec<String> = tok.pieces[..tok.n_special]
            .iter()
            .enumerate()
            .map(|(i, p)| format!("{i}\t{p}"))
            .collect();
        if specials != expected {
            return Err(bad("special-token table mismatch"));
        }
        Ok(tok)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_text(&fs::read_to_string(path)?)
    }

    /// Hex SHA-256 of the serialized form; checkpoints record it.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_text().as_bytes()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn langs() -> Vec<String> {
        vec!["en".into(), "es".into()]
    }

    fn corpus(items: &[&str]) -> Vec<String> {
        items.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn zero_merges_is_character_level() {
        let tok = Tokenizer::train(&corpus(&["London", "Londres"]), 0, &langs()).unwrap();
        assert!(tok.merges().is_empty());
        assert_eq!(tok.encode("London").len(), 6);
        assert_eq!(tok.encode("").len(), 0);
    }

    #[test]
    fn first_merge_follows_pair_counts() {
        let c = corpus(&["aaab", "aab"]);
        // Pair-count oracle over the same symbolization.
        let mut counts: BTreeMap<(String, String), usize> = BTreeMap::new();
        for s in &c {
            for w in words_of(s) {
                for p in w.windows(2) {
                    *counts.entry((p[0].clone(), p[1].clone())).or_default() += 1;
                }
            }
        }
        let max = counts.values().max().unwrap();
        let oracle = counts.iter().find(|(_, c)| *c == max).unwrap().0.clone();
        let tok = Tokenizer::train(&c, 1, &langs()).unwrap();
        assert_eq!(tok.merges()[0], oracle);
        assert_eq!(tok.merges()[0], ("a".to_owned(), "a".to_owned()));
    }

    #[test]
    fn empty_corpus_is_an_error() {
        assert!(Tokenizer::train(&[], 10, &langs()).is_err());
    }

    #[test]
    fn special_ids_are_fixed_and_rendered() {
        let tok = Tokenizer::train(&corpus(&["ab"]), 0, &langs()).unwrap();
        assert_eq!(tok.piece(Special::Eos.id()).unwrap(), "[EOS]");
        assert_eq!(tok.lang_token("es").unwrap(), 8);
        assert!(tok.lang_token("fi").is_err());
        let mut ids = tok.encode("ab");
        ids.push(Special::Eos.id());
        assert_eq!(tok.decode(&ids).unwrap(), "ab[EOS]");
        assert!(tok.decode(&[tok.vocab_size() as TokenId]).is_err());
        assert_eq!(tok.decode(&[]).unwrap(), "");
    }

    #[test]
    fn unknown_characters_map_to_unk() {
        let tok = Tokenizer::train(&corpus(&["ab"]), 0, &langs()).unwrap();
        assert_eq!(tok.encode("zz"), vec![Special::Unk.id(), Special::Unk.id()]);
    }

    #[test]
    fn plain_text_never_yields_specials() {
        let tok = Tokenizer::train(&corpus(&["[EOS]", "<s>", "x [S]"]), 50, &langs()).unwrap();
        for s in ["[EOS]", "<s>", "x [S]", "[P]"] {
            // `<unk>` is reserved for out-of-alphabet characters such as `P`.
            assert!(tok.encode(s).iter().all(|&id| id == Special::Unk.id() || !tok.is_special(id)));
        }
        assert!(tok.encode("[EOS]").iter().all(|&id| !tok.is_special(id)));
    }

    #[test]
    fn serialization_round_trip() {
        let tok = Tokenizer::train(&corpus(&["Londres", "London", "Lon don"]), 5, &langs()).unwrap();
        let again = Tokenizer::from_text(&tok.to_text()).unwrap();
        assert_eq!(tok, again);
        assert_eq!(tok.hash(), again.hash());
        assert!(Tokenizer::from_text("bogus\n").is_err());
    }

    proptest! {
        #[test]
        fn round_trip_on_training_strings(
            strings in prop::collection::vec("[a-zA-Zéüß ]{0,12}", 1..20),
            merges in 0usize..40,
        ) {
            let tok = Tokenizer::train(&strings, merges, &langs()).unwrap();
            for s in &strings {
                let ids = tok.encode(s);
                prop_assert!(ids.iter().all(|&i| i != Special::Unk.id()));
                prop_assert_eq!(&tok.decode(&ids).unwrap(), s);
            }
            let again = Tokenizer::train(&strings, merges, &langs()).unwrap();
            prop_assert_eq!(tok, again);
        }
    }
}
