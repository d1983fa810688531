//! Conversion of triples and cross-lingual links into role-annotated token
//! sequences.
//!
//! Monolingual triple:
//! `<s> [S] Xs </s> </s> [P] Xp </s> </s> [O] Xo [EOS] </s>`
//!
//! Cross-lingual link:
//! `<s> [S] Xs </s> </s> [P] [LAN_a] [LAN_b] </s> </s> [O] Xo [EOS] </s>`

use std::fmt::Write as _;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kg::{Triple, XLink};
use crate::tokenizer::{Special, TokenId, Tokenizer};

pub const DEFAULT_MAX_LEN: usize = 30;

/// Number of fixed marker/separator tokens in every template.
pub const TEMPLATE_OVERHEAD: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Role {
    Bos,
    Sep,
    SMark,
    STok,
    PMark,
    PTok,
    LanTok,
    OMark,
    OTok,
    EosTok,
}

impl Role {
    pub fn label(self) -> &'static str {
        match self {
            Role::Bos => "BOS",
            Role::Sep => "SEP",
            Role::SMark => "S_MARK",
            Role::STok => "S_TOK",
            Role::PMark => "P_MARK",
            Role::PTok => "P_TOK",
            Role::LanTok => "LAN_TOK",
            Role::OMark => "O_MARK",
            Role::OTok => "O_TOK",
            Role::EosTok => "EOS_TOK",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FactKind {
    Mono,
    XLink,
}

/// What follows `[P]`: a relation surface string or a language pair.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Predicate {
    Relation(String),
    LangPair(String, String),
}

/// Either kind of training fact.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Fact {
    Triple(Triple),
    XLink(XLink),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LinearizedFact {
    pub ids: Vec<TokenId>,
    pub roles: Vec<Role>,
    /// Index of the `[O]` marker.
    pub object_start: usize,
    pub kind: FactKind,
}

impl LinearizedFact {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn eos_position(&self) -> usize {
        self.roles
            .iter()
            .position(|r| *r == Role::EosTok)
            .expect("linearized fact without [EOS]")
    }

    /// Loss-target positions: object subtokens and `[EOS]`.
    pub fn object_region(&self) -> Range<usize> {
        self.object_start + 1..self.eos_position() + 1
    }

    /// `tok/ROLE` pairs separated by spaces.
    pub fn debug_line(&self, tok: &Tokenizer) -> Result<String> {
        let mut line = String::new();
        for (i, (&id, role)) in self.ids.iter().zip(&self.roles).enumerate() {
            if i > 0 {
                line.push(' ');
            }
            let _ = write!(line, "{}/{}", tok.piece(id)?, role.label());
        }
        Ok(line)
    }
}

/// Token sequence up to and including `[O]`, as fed to the decoder.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Prefix {
    pub ids: Vec<TokenId>,
    pub roles: Vec<Role>,
}

impl Prefix {
    pub fn object_start(&self) -> usize {
        self.ids.len() - 1
    }
}

struct Builder {
    ids: Vec<TokenId>,
    roles: Vec<Role>,
}

impl Builder {
    fn new() -> Self {
        Builder {
            ids: Vec::with_capacity(DEFAULT_MAX_LEN),
            roles: Vec::with_capacity(DEFAULT_MAX_LEN),
        }
    }

    fn push(&mut self, id: TokenId, role: Role) {
        self.ids.push(id);
        self.roles.push(role);
    }

    fn extend(&mut self, ids: &[TokenId], role: Role) {
        for &id in ids {
            self.push(id, role);
        }
    }
}

fn build_prefix(tok: &Tokenizer, subject: &str, predicate: &Predicate) -> Result<Builder> {
    let mut b = Builder::new();
    b.push(Special::Bos.id(), Role::Bos);
    b.push(Special::Subject.id(), Role::SMark);
    b.extend(&tok.encode(subject), Role::STok);
    b.push(Special::Sep.id(), Role::Sep);
    b.push(Special::Sep.id(), Role::Sep);
    b.push(Special::Predicate.id(), Role::PMark);
    match predicate {
        Predicate::Relation(r) => b.extend(&tok.encode(r), Role::PTok),
        Predicate::LangPair(a, c) => {
            b.push(tok.lang_token(a)?, Role::LanTok);
            b.push(tok.lang_token(c)?, Role::LanTok);
        }
    }
    b.push(Special::Sep.id(), Role::Sep);
    b.push(Special::Sep.id(), Role::Sep);
    b.push(Special::Object.id(), Role::OMark);
    Ok(b)
}

/// Linearizes `(subject, predicate) → ?` up to `[O]`.
pub fn linearize_prefix(
    tok: &Tokenizer,
    subject: &str,
    predicate: &Predicate,
    max_len: usize,
) -> Result<Prefix> {
    let b = build_prefix(tok, subject, predicate)?;
    if b.ids.len() >= max_len {
        return Err(Error::TooLong {
            len: b.ids.len(),
            max: max_len,
        });
    }
    Ok(Prefix {
        ids: b.ids,
        roles: b.roles,
    })
}

/// Full sequence for an arbitrary object; shared by both templates and the
/// exhaustive scorer.
pub fn linearize_parts(
    tok: &Tokenizer,
    subject: &str,
    predicate: &Predicate,
    object: &str,
    max_len: usize,
) -> Result<LinearizedFact> {
    let mut b = build_prefix(tok, subject, predicate)?;
    let object_start = b.ids.len() - 1;
    b.extend(&tok.encode(object), Role::OTok);
    b.push(Special::Eos.id(), Role::EosTok);
    b.push(Special::Sep.id(), Role::Sep);
    if b.ids.len() >= max_len {
        return Err(Error::TooLong {
            len: b.ids.len(),
            max: max_len,
        });
    }
    let kind = match predicate {
        Predicate::Relation(_) => FactKind::Mono,
        Predicate::LangPair(..) => FactKind::XLink,
    };
    Ok(LinearizedFact {
        ids: b.ids,
        roles: b.roles,
        object_start,
        kind,
    })
}

pub fn linearize_triple(t: &Triple, tok: &Tokenizer, max_len: usize) -> Result<LinearizedFact> {
    linearize_parts(
        tok,
        &t.subject,
        &Predicate::Relation(t.relation.clone()),
        &t.object,
        max_len,
    )
}

pub fn linearize_xlink(x: &XLink, tok: &Tokenizer, max_len: usize) -> Result<LinearizedFact> {
    linearize_parts(
        tok,
        &x.entity_a,
        &Predicate::LangPair(x.lang_a.clone(), x.lang_b.clone()),
        &x.entity_b,
        max_len,
    )
}

pub fn linearize_fact(f: &Fact, tok: &Tokenizer, max_len: usize) -> Result<LinearizedFact> {
    match f {
        Fact::Triple(t) => linearize_triple(t, tok, max_len),
        Fact::XLink(x) => linearize_xlink(x, tok, max_len),
    }
}

pub fn object_region(f: &LinearizedFact) -> Range<usize> {
    f.object_region()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn char_tok(strings: &[&str]) -> Tokenizer {
        let corpus: Vec<String> = strings.iter().map(|s| s.to_string()).collect();
        Tokenizer::train(&corpus, 0, &["en".into(), "es".into(), "fi".into()]).unwrap()
    }

    fn skeleton(f: &LinearizedFact) -> Vec<Role> {
        f.roles
            .iter()
            .copied()
            .filter(|r| !matches!(r, Role::STok | Role::PTok | Role::LanTok | Role::OTok))
            .collect()
    }

    const SKELETON: [Role; 10] = [
        Role::Bos,
        Role::SMark,
        Role::Sep,
        Role::Sep,
        Role::PMark,
        Role::Sep,
        Role::Sep,
        Role::OMark,
        Role::EosTok,
        Role::Sep,
    ];

    #[test]
    fn england_template() {
        let tok = char_tok(&["England", "capital", "London"]);
        let t = Triple::new("en", "England", "capital", "London");
        let f = linearize_triple(&t, &tok, 64).unwrap();
        let text = tok.decode(&f.ids).unwrap();
        assert_eq!(text, "<s>[S]England</s></s>[P]capital</s></s>[O]London[EOS]</s>");
        assert_eq!(skeleton(&f), SKELETON);
        // 7 + 7 + 6 content tokens + 10 fixed = 30, which the default limit rejects.
        assert!(matches!(
            linearize_triple(&t, &tok, DEFAULT_MAX_LEN),
            Err(Error::TooLong { len: 30, max: 30 })
        ));
    }

    #[test]
    fn single_char_triple_has_thirteen_tokens() {
        let tok = char_tok(&["a", "r", "b"]);
        let f = linearize_triple(&Triple::new("en", "a", "r", "b"), &tok, 30).unwrap();
        assert_eq!(f.len(), TEMPLATE_OVERHEAD + 3);
        assert_eq!(f.ids.iter().filter(|&&i| i == Special::Eos.id()).count(), 1);
    }

    #[test]
    fn xlink_predicate_span() {
        let tok = char_tok(&["London", "Londres"]);
        let fwd = linearize_xlink(&XLink::new("en", "London", "es", "Londres"), &tok, 30).unwrap();
        let p = fwd.roles.iter().position(|r| *r == Role::PMark).unwrap();
        assert_eq!(
            &fwd.ids[p..p + 3],
            &[Special::Predicate.id(), tok.lang_token("en").unwrap(), tok.lang_token("es").unwrap()]
        );
        assert_eq!(&fwd.roles[p + 1..p + 3], &[Role::LanTok, Role::LanTok]);
        assert_eq!(fwd.kind, FactKind::XLink);

        let rev = linearize_xlink(&XLink::new("es", "Londres", "en", "London"), &tok, 30).unwrap();
        assert_ne!(fwd.ids, rev.ids);
        let p = rev.roles.iter().position(|r| *r == Role::PMark).unwrap();
        assert_eq!(
            &rev.ids[p + 1..p + 3],
            &[tok.lang_token("es").unwrap(), tok.lang_token("en").unwrap()]
        );
    }

    #[test]
    fn same_surface_link() {
        let tok = char_tok(&["A"]);
        let f = linearize_xlink(&XLink::new("en", "A", "fi", "A"), &tok, 30).unwrap();
        let span = |role| -> Vec<TokenId> {
            f.ids.iter().zip(&f.roles).filter(|(_, r)| **r == role).map(|(i, _)| *i).collect()
        };
        assert_eq!(span(Role::STok), span(Role::OTok));
    }

    #[test]
    fn unregistered_language_fails() {
        let tok = char_tok(&["A"]);
        assert!(linearize_xlink(&XLink::new("en", "A", "de", "A"), &tok, 30).is_err());
    }

    #[test]
    fn object_region_positions() {
        let tok = char_tok(&["England", "capital", "London"]);
        let f = linearize_triple(&Triple::new("en", "England", "capital", "London"), &tok, 64).unwrap();
        // <s> [S] 7 </s> </s> [P] 7 </s> </s> [O] → [O] at index 21, object at 22..28, [EOS] at 28.
        assert_eq!(f.object_start, 21);
        assert_eq!(f.object_region(), 22..29);
        assert_eq!(tok.decode(&f.ids[22..28]).unwrap(), "London");
        assert_eq!(f.ids[28], Special::Eos.id());
        assert_eq!(f.debug_line(&tok).unwrap().split(' ').nth(22).unwrap(), "L/O_TOK");
    }

    proptest! {
        #[test]
        fn template_invariants(s in "[a-e]{1,5}", r in "[a-e]{1,5}", o in "[a-e]{0,5}", xlink in any::<bool>()) {
            let tok = char_tok(&["abcde"]);
            let f = if xlink {
                linearize_xlink(&XLink::new("en", &s, "fi", &o), &tok, 64).unwrap()
            } else {
                linearize_triple(&Triple::new("en", &s, &r, &o), &tok, 64).unwrap()
            };
            prop_assert_eq!(f.ids.len(), f.roles.len());
            prop_assert_eq!(skeleton(&f), SKELETON.to_vec());
            let region = f.object_region();
            prop_assert!(region.start > 0);
            prop_assert_eq!(region.len(), o.chars().count() + 1);
            prop_assert_eq!(region.end - 1, f.eos_position());
            prop_assert!(f.object_start < f.eos_position());
        }

        #[test]
        fn linearize_is_injective(a in ("[ab]{1,3}", "[ab]{1,3}", "[ab]{1,3}"), b in ("[ab]{1,3}", "[ab]{1,3}", "[ab]{1,3}")) {
            let tok = char_tok(&["ab"]);
            let fa = linearize_triple(&Triple::new("en", &a.0, &a.1, &a.2), &tok, 64).unwrap();
            let fb = linearize_triple(&Triple::new("en", &b.0, &b.1, &b.2), &tok, 64).unwrap();
            prop_assert_eq!(a == b, fa.ids == fb.ids);
        }
    }
}
