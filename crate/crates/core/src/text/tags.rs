use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};

macro_rules! tag_enum {
    ($(#[$m:meta])* $name:ident { $($var:ident => $s:literal),+ $(,)? }) => {
        $(#[$m])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        pub enum $name { $($var),+ }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$var),+];

            pub fn id(self) -> usize {
                self as usize
            }

            pub fn from_id(id: usize) -> Option<Self> {
                Self::ALL.get(id).copied()
            }

            pub fn as_str(self) -> &'static str {
                match self { $($name::$var => $s),+ }
            }

            pub fn parse(s: &str) -> Option<Self> {
                match s { $($s => Some($name::$var),)+ _ => None }
            }
        }
    };
}

tag_enum!(
    /// Answer-position tag of a context token.
    Bio { O => "O", B => "B", I => "I" }
);

tag_enum!(Pos {
    Noun => "NOUN",
    Propn => "PROPN",
    Verb => "VERB",
    Aux => "AUX",
    Adp => "ADP",
    Det => "DET",
    Num => "NUM",
    Pron => "PRON",
    Adj => "ADJ",
    Adv => "ADV",
    Conj => "CONJ",
    Wh => "WH",
    Punct => "PUNCT",
    Other => "X",
});

tag_enum!(Ner {
    O => "O",
    Person => "PERSON",
    Location => "LOCATION",
    Organization => "ORGANIZATION",
    Date => "DATE",
    Number => "NUMBER",
    Misc => "MISC",
});

/// `B` at the span start, `I` through the span end, `O` elsewhere.
pub fn bio_tag(len: usize, span: (usize, usize)) -> Result<Vec<Bio>> {
    let (s, e) = span;
    if s > e || e >= len {
        bail!(
            InvalidArgument,
            "answer span [{}, {}] outside {} tokens",
            s,
            e,
            len
        );
    }
    Ok((0..len)
        .map(|i| match i {
            i if i == s => Bio::B,
            i if i > s && i <= e => Bio::I,
            _ => Bio::O,
        })
        .collect())
}

/// Assigns one POS and one NER tag to every token. Receives the original
/// surface forms, so capitalization is still visible.
pub trait Tagger {
    fn tag(&self, surface: &[&str]) -> (Vec<Pos>, Vec<Ner>);
}

/// Lexicon lookup on the lowercased form, then digit, punctuation and
/// capitalization rules.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LexiconTagger {
    pub lexicon: BTreeMap<String, (Pos, Ner)>,
}

impl LexiconTagger {
    pub fn insert(&mut self, word: &str, pos: Pos, ner: Ner) {
        self.lexicon.insert(word.to_lowercase(), (pos, ner));
    }

    pub fn tag_one(&self, surface: &str, sentence_start: bool) -> (Pos, Ner) {
        let lower = surface.to_lowercase();
        if let Some(&t) = self.lexicon.get(&lower) {
            return t;
        }
        let digits: String = surface.chars().filter(|c| *c != ',' && *c != '.').collect();
        if !digits.is_empty() && digits.chars().all(|c| c.is_ascii_digit()) {
            let year_like = surface.len() == 4
                && matches!(surface.parse::<u32>(), Ok(y) if (1000..=2099).contains(&y));
            return (Pos::Num, if year_like { Ner::Date } else { Ner::Number });
        }
        if surface.chars().all(|c| !c.is_alphanumeric()) {
            return (Pos::Punct, Ner::O);
        }
        if !sentence_start && surface.chars().next().is_some_and(char::is_uppercase) {
            return (Pos::Propn, Ner::Misc);
        }
        (Pos::Noun, Ner::O)
    }
}

impl Tagger for LexiconTagger {
    fn tag(&self, surface: &[&str]) -> (Vec<Pos>, Vec<Ner>) {
        let mut pos = Vec::with_capacity(surface.len());
        let mut ner = Vec::with_capacity(surface.len());
        let mut start = true;
        for s in surface {
            let (p, n) = self.tag_one(s, start);
            start = matches!(*s, "." | "?" | "!");
            pos.push(p);
            ner.push(n);
        }
        (pos, ner)
    }
}
