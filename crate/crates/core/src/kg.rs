//! Knowledge-graph storage: parsing, vocabularies, link-prediction splits and
//! the filtered candidate index.
//!
//! Files are tab-separated UTF-8, one record per line, `#` starts a comment.
//! All surface strings are NFC-normalized on read.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use indexmap::IndexSet;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use unicode_normalization::UnicodeNormalization;

use crate::error::{Error, Result};

/// ISO 639-1 two-letter codes accepted as language tags.
pub const ISO_639_1: &[&str] = &[
    "aa", "ab", "ae", "af", "ak", "am", "an", "ar", "as", "av", "ay", "az", "ba", "be", "bg", "bh",
    "bi", "bm", "bn", "bo", "br", "bs", "ca", "ce", "ch", "co", "cr", "cs", "cu", "cv", "cy", "da",
    "de", "dv", "dz", "ee", "el", "en", "eo", "es", "et", "eu", "fa", "ff", "fi", "fj", "fo", "fr",
    "fy", "ga", "gd", "gl", "gn", "gu", "gv", "ha", "he", "hi", "ho", "hr", "ht", "hu", "hy", "hz",
    "ia", "id", "ie", "ig", "ii", "ik", "io", "is", "it", "iu", "ja", "jv", "ka", "kg", "ki", "kj",
    "kk", "kl", "km", "kn", "ko", "kr", "ks", "ku", "kv", "kw", "ky", "la", "lb", "lg", "li", "ln",
    "lo", "lt", "lu", "lv", "mg", "mh", "mi", "mk", "ml", "mn", "mr", "ms", "mt", "my", "na", "nb",
    "nd", "ne", "ng", "nl", "nn", "no", "nr", "nv", "ny", "oc", "oj", "om", "or", "os", "pa", "pi",
    "pl", "ps", "pt", "qu", "rm", "rn", "ro", "ru", "rw", "sa", "sc", "sd", "se", "sg", "si", "sk",
    "sl", "sm", "sn", "so", "sq", "sr", "ss", "st", "su", "sv", "sw", "ta", "te", "tg", "th", "ti",
    "tk", "tl", "tn", "to", "tr", "ts", "tt", "tw", "ty", "ug", "uk", "ur", "uz", "ve", "vi", "vo",
    "wa", "wo", "xh", "yi", "yo", "za", "zh", "zu",
];

pub fn is_registered_language(code: &str) -> bool {
    ISO_639_1.binary_search(&code).is_ok()
}

/// A monolingual fact `(subject, relation, object)` tagged with its language.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Triple {
    pub lang: String,
    pub subject: String,
    pub relation: String,
    pub object: String,
}

impl Triple {
    pub fn new(lang: &str, subject: &str, relation: &str, object: &str) -> Self {
        Triple {
            lang: lang.to_owned(),
            subject: subject.to_owned(),
            relation: relation.to_owned(),
            object: object.to_owned(),
        }
    }
}

/// A cross-lingual link asserting that two entities denote the same thing.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct XLink {
    pub lang_a: String,
    pub entity_a: String,
    pub lang_b: String,
    pub entity_b: String,
}

impl XLink {
    pub fn new(lang_a: &str, entity_a: &str, lang_b: &str, entity_b: &str) -> Self {
        XLink {
            lang_a: lang_a.to_owned(),
            entity_a: entity_a.to_owned(),
            lang_b: lang_b.to_owned(),
            entity_b: entity_b.to_owned(),
        }
    }
}

/// Deduplicated, insertion-ordered collection of records.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RecordSet<T: std::hash::Hash + Eq> {
    items: IndexSet<T>,
    /// Number of well-formed records read, duplicates included.
    pub records_read: usize,
}

pub type TripleSet = RecordSet<Triple>;
pub type XLinkSet = RecordSet<XLink>;

impl<T: std::hash::Hash + Eq> Default for RecordSet<T> {
    fn default() -> Self {
        RecordSet {
            items: IndexSet::new(),
            records_read: 0,
        }
    }
}

impl<T: std::hash::Hash + Eq + Clone> RecordSet<T> {
    pub fn from_records(records: impl IntoIterator<Item = T>) -> Self {
        let mut set = Self::default();
        for r in records {
            set.insert(r);
        }
        set
    }

    /// Inserts a record, returning false if it was already present.
    pub fn insert(&mut self, record: T) -> bool {
        self.records_read += 1;
        self.items.insert(record)
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn duplicates(&self) -> usize {
        self.records_read - self.items.len()
    }

    pub fn contains(&self, record: &T) -> bool {
        self.items.contains(record)
    }

    pub fn iter(&self) -> impl Iterator<Item = &T> {
        self.items.iter()
    }

    pub fn to_vec(&self) -> Vec<T> {
        self.items.iter().cloned().collect()
    }
}

impl<'a, T: std::hash::Hash + Eq> IntoIterator for &'a RecordSet<T> {
    type Item = &'a T;
    type IntoIter = indexmap::set::Iter<'a, T>;

    fn into_iter(self) -> Self::IntoIter {
        self.items.iter()
    }
}

fn split_fields<'a>(path: &Path, lineno: usize, line: &'a str, n: usize) -> Result<Vec<&'a str>> {
    let fields: Vec<&str> = line.split('\t').collect();
    if fields.len() != n {
        return Err(Error::Parse {
            path: path.to_owned(),
            line: lineno,
            msg: format!("expected {n} tab-separated fields, found {}", fields.len()),
        });
    }
    Ok(fields)
}

fn clean_field(path: &Path, lineno: usize, raw: &str, what: &str) -> Result<String> {
    let s: String = raw.trim().nfc().collect();
    if s.is_empty() {
        return Err(Error::Parse {
            path: path.to_owned(),
            line: lineno,
            msg: format!("empty {what}"),
        });
    }
    Ok(s)
}

fn check_lang(path: &Path, lineno: usize, code: &str) -> Result<()> {
    if is_registered_language(code) {
        Ok(())
    } else {
        Err(Error::Validation(format!(
            "{}:{lineno}: unknown language code {code:?}",
            path.display()
        )))
    }
}

/// Iterates over `(line number, content)` of data lines, skipping comments and blanks.
fn data_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines().enumerate().filter_map(|(i, l)| {
        let l = l.strip_suffix('\r').unwrap_or(l);
        if l.trim().is_empty() || l.starts_with('#') {
            None
        } else {
            Some((i + 1, l))
        }
    })
}

pub fn parse_triples(path: &Path) -> Result<TripleSet> {
    let text = fs::read_to_string(path)?;
    parse_triples_str(&text, path)
}

/// Parses triple records from text; `origin` is only used in error messages.
pub fn parse_triples_str(text: &str, origin: &Path) -> Result<TripleSet> {
    let mut set = TripleSet::default();
    for (lineno, line) in data_lines(text) {
        let f = split_fields(origin, lineno, line, 4)?;
        let lang = clean_field(origin, lineno, f[0], "language")?;
        check_lang(origin, lineno, &lang)?;
        set.insert(Triple {
            lang,
            subject: clean_field(origin, lineno, f[1], "subject")?,
            relation: clean_field(origin, lineno, f[2], "relation")?,
            object: clean_field(origin, lineno, f[3], "object")?,
        });
    }
    Ok(set)
}

pub fn parse_xlinks(path: &Path) -> Result<XLinkSet> {
    let text = fs::read_to_string(path)?;
    parse_xlinks_str(&text, path)
}

pub fn parse_xlinks_str(text: &str, origin: &Path) -> Result<XLinkSet> {
    let mut set = XLinkSet::default();
    for (lineno, line) in data_lines(text) {
        let f = split_fields(origin, lineno, line, 4)?;
        let lang_a = clean_field(origin, lineno, f[0], "language")?;
        let lang_b = clean_field(origin, lineno, f[2], "language")?;
        check_lang(origin, lineno, &lang_a)?;
        check_lang(origin, lineno, &lang_b)?;
        if lang_a == lang_b {
            return Err(Error::Validation(format!(
                "{}:{lineno}: link within a single language {lang_a:?}",
                origin.display()
            )));
        }
        set.insert(XLink {
            lang_a,
            entity_a: clean_field(origin, lineno, f[1], "entity")?,
            lang_b,
            entity_b: clean_field(origin, lineno, f[3], "entity")?,
        });
    }
    Ok(set)
}

pub fn format_triples<'a>(triples: impl IntoIterator<Item = &'a Triple>) -> String {
    let mut out = String::new();
    for t in triples {
        let _ = writeln!(out, "{}\t{}\t{}\t{}", t.lang, t.subject, t.relation, t.object);
    }
    out
}

pub fn format_xlinks<'a>(links: impl IntoIterator<Item = &'a XLink>) -> String {
    let mut out = String::new();
    for x in links {
        let _ = writeln!(out, "{}\t{}\t{}\t{}", x.lang_a, x.entity_a, x.lang_b, x.entity_b);
    }
    out
}

/// Per-language entity and relation inventories.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct KgVocab {
    pub entities: BTreeMap<String, BTreeSet<String>>,
    pub relations: BTreeMap<String, BTreeSet<String>>,
    pub languages: BTreeSet<String>,
}

impl KgVocab {
    pub fn entities_of(&self, lang: &str) -> impl Iterator<Item = &String> {
        self.entities.get(lang).into_iter().flatten()
    }

    pub fn has_entity(&self, lang: &str, entity: &str) -> bool {
        self.entities.get(lang).is_some_and(|s| s.contains(entity))
    }

    /// Every surface string in the vocabulary, for tokenizer training.
    pub fn surface_strings(&self) -> Vec<String> {
        let mut all = BTreeSet::new();
        for set in self.entities.values().chain(self.relations.values()) {
            all.extend(set.iter().cloned());
        }
        all.into_iter().collect()
    }
}

pub fn build_vocab<'a>(
    triples: impl IntoIterator<Item = &'a Triple>,
    xlinks: impl IntoIterator<Item = &'a XLink>,
) -> KgVocab {
    let mut v = KgVocab::default();
    for t in triples {
        v.languages.insert(t.lang.clone());
        let ents = v.entities.entry(t.lang.clone()).or_default();
        ents.insert(t.subject.clone());
        ents.insert(t.object.clone());
        v.relations
            .entry(t.lang.clone())
            .or_default()
            .insert(t.relation.clone());
    }
    for x in xlinks {
        for (lang, ent) in [(&x.lang_a, &x.entity_a), (&x.lang_b, &x.entity_b)] {
            v.languages.insert(lang.clone());
            v.entities.entry(lang.clone()).or_default().insert(ent.clone());
        }
    }
    v
}

/// Train/test partition for link prediction.
#[derive(Debug, Clone, PartialEq)]
pub struct LpSplit {
    pub train: Vec<Triple>,
    pub test: Vec<Triple>,
    /// Sampled test triples dropped because an inverse edge exists in train.
    pub removed: Vec<Triple>,
    pub seed: u64,
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub seed: u64,
    pub ratio: f64,
    pub train: usize,
    pub test: usize,
    pub removed: usize,
}

fn lang_seed(seed: u64, lang: &str) -> u64 {
    // FNV-1a over the language code, mixed with the run seed.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in lang.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h ^ seed.rotate_left(17)
}

/// Samples `ratio` of each language's triples as test, then drops test triples
/// `(e1, r1, e2)` for which some `(e2, r2, e1)` is in train.
pub fn split_lp(triples: &TripleSet, ratio: f64, seed: u64) -> Result<LpSplit> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "split ratio must lie in (0, 1), got {ratio}"
        )));
    }
    let mut by_lang: BTreeMap<&str, Vec<&Triple>> = BTreeMap::new();
    for t in triples {
        by_lang.entry(t.lang.as_str()).or_default().push(t);
    }

    let mut train_set = HashSet::new();
    let mut sampled = HashSet::new();
    for (lang, list) in &by_lang {
        let mut rng = ChaCha8Rng::seed_from_u64(lang_seed(seed, lang));
        let mut idx: Vec<usize> = (0..list.len()).collect();
        idx.shuffle(&mut rng);
        let n_test = (ratio * list.len() as f64).round() as usize;
        for (k, &i) in idx.iter().enumerate() {
            if k < n_test {
                sampled.insert(list[i]);
            } else {
                train_set.insert(list[i]);
            }
        }
    }

    // (lang, head, tail) pairs connected by any relation in train.
    let train_edges: HashSet<(&str, &str, &str)> = train_set
        .iter()
        .map(|t| (t.lang.as_str(), t.subject.as_str(), t.object.as_str()))
        .collect();

    let mut split = LpSplit {
        train: Vec::new(),
        test: Vec::new(),
        removed: Vec::new(),
        seed,
        ratio,
    };
    for t in triples {
        if train_set.contains(t) {
            split.train.push(t.clone());
        } else if sampled.contains(t) {
            if train_edges.contains(&(t.lang.as_str(), t.object.as_str(), t.subject.as_str())) {
                split.removed.push(t.clone());
            } else {
                split.test.push(t.clone());
            }
        }
    }
    Ok(split)
}

impl LpSplit {
    pub fn manifest(&self) -> SplitManifest {
        SplitManifest {
            seed: self.seed,
            ratio: self.ratio,
            train: self.train.len(),
            test: self.test.len(),
            removed: self.removed.len(),
        }
    }

    /// Writes `train.tsv`, `test.tsv` and `split.json` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("train.tsv"), format_triples(&self.train))?;
        fs::write(dir.join("test.tsv"), format_triples(&self.test))?;
        let mut json = serde_json::to_string_pretty(&self.manifest())?;
        json.push('\n');
        fs::write(dir.join("split.json"), json)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let manifest: SplitManifest =
            serde_json::from_str(&fs::read_to_string(dir.join("split.json"))?)?;
        let train = parse_triples(&dir.join("train.tsv"))?.to_vec();
        let test = parse_triples(&dir.join("test.tsv"))?.to_vec();
        Ok(LpSplit {
            train,
            test,
            removed: Vec::new(),
            seed: manifest.seed,
            ratio: manifest.ratio,
        })
    }

    pub fn all_triples(&self) -> impl Iterator<Item = &Triple> {
        self.train.iter().chain(self.test.iter())
    }
}

/// Known objects of each `(lang, subject, relation)` plus the per-language
/// entity inventory; used to build filtered candidate lists.
#[derive(Debug, Clone)]
pub struct FilterIndex {
    known: HashMap<(String, String, String), BTreeSet<String>>,
    entities: BTreeMap<String, BTreeSet<String>>,
}

impl FilterIndex {
    pub fn new<'a>(known_triples: impl IntoIterator<Item = &'a Triple>, vocab: &KgVocab) -> Self {
        let mut known: HashMap<(String, String, String), BTreeSet<String>> = HashMap::new();
        for t in known_triples {
            known
                .entry((t.lang.clone(), t.subject.clone(), t.relation.clone()))
                .or_default()
                .insert(t.object.clone());
        }
        FilterIndex {
            known,
            entities: vocab.entities.clone(),
        }
    }

    pub fn from_split(split: &LpSplit, vocab: &KgVocab) -> Self {
        Self::new(split.all_triples(), vocab)
    }

    /// Full entity inventory of `lang`, sorted.
    pub fn all_candidates(&self, lang: &str) -> Result<Vec<String>> {
        self.entities
            .get(lang)
            .map(|s| s.iter().cloned().collect())
            .ok_or_else(|| Error::UnknownLanguage(lang.to_owned()))
    }

    /// Entity set of `lang` minus every other known object of `(subject, relation)`.
    pub fn candidates(&self, lang: &str, subject: &str, relation: &str, gold: &str) -> Result<Vec<String>> {
        let ents = self
            .entities
            .get(lang)
            .ok_or_else(|| Error::UnknownLanguage(lang.to_owned()))?;
        if !ents.contains(gold) {
            return Err(Error::Validation(format!(
                "gold entity {gold:?} is not in the {lang} entity vocabulary"
            )));
        }
        let key = (lang.to_owned(), subject.to_owned(), relation.to_owned());
        let known = self.known.get(&key);
        Ok(ents
            .iter()
            .filter(|e| e.as_str() == gold || !known.is_some_and(|k| k.contains(e.as_str())))
            .cloned()
            .collect())
    }
}

/// Convenience wrapper: filtered candidates for one query given a raw triple list.
pub fn filtered_candidates<'a>(
    lang: &str,
    subject: &str,
    relation: &str,
    all_triples: impl IntoIterator<Item = &'a Triple>,
    vocab: &KgVocab,
    gold: &str,
) -> Result<Vec<String>> {
    FilterIndex::new(all_triples, vocab).candidates(lang, subject, relation, gold)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn p() -> &'static Path {
        Path::new("fixture.tsv")
    }

    #[test]
    fn parses_single_triple() {
        let set = parse_triples_str("en\tEngland\tcapital\tLondon\n", p()).unwrap();
        assert_eq!(set.to_vec(), vec![Triple::new("en", "England", "capital", "London")]);
    }

    #[test]
    fn empty_file_gives_empty_set() {
        assert!(parse_triples_str("", p()).unwrap().is_empty());
    }

    #[test]
    fn duplicates_are_counted_and_removed() {
        let text = "\
en\tA\tr\tB
en\tA\tr\tC
en\tA\tr\tB
fi\tA\tr\tB
en\tD\ts\tE
en\tD\ts\tE
# comment
en\tF\ts\tG
";
        let set = parse_triples_str(text, p()).unwrap();
        // Line-count oracle: 7 records, 5 distinct.
        let lines: Vec<&str> = text.lines().filter(|l| !l.starts_with('#')).collect();
        let distinct: BTreeSet<&str> = lines.iter().copied().collect();
        assert_eq!(set.records_read, lines.len());
        assert_eq!(set.len(), distinct.len());
        assert_eq!((set.records_read, set.len(), set.duplicates()), (7, 5, 2));
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let err = parse_triples_str("en\tA\tr\tB\nen\tA\tr\n", p()).unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unknown_language_is_rejected() {
        let err = parse_triples_str("xx\tA\tr\tB\n", p()).unwrap_err();
        assert!(matches!(err, Error::Validation(_)));
    }

    #[test]
    fn nfc_normalization_on_read() {
        let set = parse_triples_str("fr\tCafe\u{301}\tr\tB\n", p()).unwrap();
        assert_eq!(set.to_vec()[0].subject, "Caf\u{e9}");
    }

    #[test]
    fn parses_xlink() {
        let set = parse_xlinks_str("en\tLondon\tes\tLondres\n", p()).unwrap();
        assert_eq!(set.to_vec(), vec![XLink::new("en", "London", "es", "Londres")]);
    }

    #[test]
    fn self_language_link_is_rejected_with_line() {
        let err = parse_xlinks_str("en\tA\tes\tB\nen\tA\ten\tB\n", p()).unwrap_err();
        assert!(err.to_string().contains(":2:"), "{err}");
    }

    #[test]
    fn xlink_counting() {
        let text = "\
en\tA\tes\tA1
en\tB\tes\tB1
es\tA1\ten\tA
en\tA\tfi\tA2
en\tB\tfi\tB2
fi\tA2\ten\tA
en\tC\tes\tC1
en\tC\tfi\tC2
en\tD\tfi\tD2
en\tE\tes\tE1
";
        let set = parse_xlinks_str(text, p()).unwrap();
        let pairs: BTreeSet<(String, String)> =
            set.iter().map(|x| (x.lang_a.clone(), x.lang_b.clone())).collect();
        assert_eq!(set.len(), 10);
        assert_eq!(pairs.len(), 4);
    }

    #[test]
    fn vocab_minimal() {
        let t = [Triple::new("en", "A", "r", "B")];
        let v = build_vocab(&t, &[]);
        assert_eq!(v.entities["en"], BTreeSet::from(["A".to_owned(), "B".to_owned()]));
        assert_eq!(v.relations["en"], BTreeSet::from(["r".to_owned()]));
    }

    #[test]
    fn vocab_includes_link_entities() {
        let t = [Triple::new("en", "England", "capital", "London")];
        let x = [XLink::new("en", "London", "es", "Londres")];
        let v = build_vocab(&t, &x);
        assert!(v.has_entity("es", "Londres"));
        assert!(v.has_entity("en", "London"));
    }

    #[test]
    fn split_rejects_bad_ratio() {
        let set = TripleSet::default();
        assert!(split_lp(&set, 0.0, 1).is_err());
        assert!(split_lp(&set, 1.0, 1).is_err());
    }

    #[test]
    fn split_ten_percent() {
        let set = TripleSet::from_records(
            (0..1000).map(|i| Triple::new("en", &format!("s{i}"), "r", &format!("o{i}"))),
        );
        let a = split_lp(&set, 0.1, 7).unwrap();
        let b = split_lp(&set, 0.1, 7).unwrap();
        assert!(a.test.len() <= 100);
        assert_eq!(a, b);
        let c = split_lp(&set, 0.1, 8).unwrap();
        assert_ne!(a.test, c.test);
    }

    #[test]
    fn split_removes_redundant_inverse() {
        // Sample until (B, r2, A) lands in test while (A, r1, B) stays in train.
        let mut records = vec![
            Triple::new("en", "A", "r1", "B"),
            Triple::new("en", "B", "r2", "A"),
        ];
        records.extend((0..8).map(|i| Triple::new("en", &format!("x{i}"), "r", &format!("y{i}"))));
        let set = TripleSet::from_records(records);
        let inverse = Triple::new("en", "B", "r2", "A");
        let forward = Triple::new("en", "A", "r1", "B");
        let mut hit = false;
        for seed in 0..200 {
            let s = split_lp(&set, 0.2, seed).unwrap();
            if s.train.contains(&forward) {
                assert!(!s.test.contains(&inverse));
                if s.removed.contains(&inverse) {
                    hit = true;
                }
            }
        }
        assert!(hit, "no seed exercised the inverse rule");
    }

    #[test]
    fn filtered_excludes_other_known_objects() {
        let triples = [
            Triple::new("en", "A", "r", "B"),
            Triple::new("en", "A", "r", "C"),
            Triple::new("en", "D", "r", "E"),
        ];
        let v = build_vocab(&triples, &[]);
        let c = filtered_candidates("en", "A", "r", &triples, &v, "B").unwrap();
        assert!(c.contains(&"B".to_owned()));
        assert!(!c.contains(&"C".to_owned()));
        let c = filtered_candidates("en", "D", "r", &triples, &v, "E").unwrap();
        assert_eq!(c.len(), v.entities["en"].len());
        assert!(filtered_candidates("en", "A", "r", &triples, &v, "Z").is_err());
    }

    fn arb_triples() -> impl Strategy<Value = Vec<Triple>> {
        prop::collection::vec((0u8..6, 0u8..3, 0u8..6, 0u8..2), 1..60).prop_map(|v| {
            v.into_iter()
                .map(|(s, r, o, l)| {
                    Triple::new(
                        ["en", "de"][l as usize],
                        &format!("e{s}"),
                        &format!("r{r}"),
                        &format!("e{o}"),
                    )
                })
                .collect()
        })
    }

    proptest! {
        #[test]
        fn split_is_a_partition(triples in arb_triples(), seed in 0u64..1000, ratio in 0.05f64..0.95) {
            let set = TripleSet::from_records(triples);
            let s = split_lp(&set, ratio, seed).unwrap();
            let train: HashSet<_> = s.train.iter().collect();
            let test: HashSet<_> = s.test.iter().collect();
            prop_assert!(train.is_disjoint(&test));
            prop_assert_eq!(s.train.len() + s.test.len() + s.removed.len(), set.len());
            for t in &s.removed {
                prop_assert!(s.train.iter().any(|u| u.lang == t.lang && u.subject == t.object && u.object == t.subject));
            }
            for t in &s.test {
                prop_assert!(!s.train.iter().any(|u| u.lang == t.lang && u.subject == t.object && u.object == t.subject));
            }
        }

        #[test]
        fn filter_matches_brute_force(triples in arb_triples(), pick in 0usize..60) {
            let v = build_vocab(&triples, &[]);
            let q = &triples[pick % triples.len()];
            let got = filtered_candidates(&q.lang, &q.subject, &q.relation, &triples, &v, &q.object).unwrap();
            let expected: Vec<String> = v.entities[&q.lang].iter().filter(|e| {
                *e == &q.object || !triples.iter().any(|t| t.lang == q.lang && t.subject == q.subject && t.relation == q.relation && &t.object == *e)
            }).cloned().collect();
            prop_assert!(got.contains(&q.object));
            prop_assert_eq!(got, expected);
        }

        #[test]
        fn triple_file_round_trip(triples in arb_triples()) {
            let set = TripleSet::from_records(triples);
            let text = format_triples(&set);
            let again = parse_triples_str(&text, Path::new("x")).unwrap();
            prop_assert_eq!(set.to_vec(), again.to_vec());
        }
    }
}
