use serde::{Deserialize, Serialize};

use super::tags::Ner;

pub const WH_WORDS: [&str; 7] = ["who", "what", "when", "where", "which", "why", "how"];

/// Coarse answer type, derived from the entity tag of the answer's first token.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AnswerType {
    Person,
    Location,
    Date,
    Number,
    Thing,
}

impl AnswerType {
    pub fn from_ner(ner: Ner) -> Self {
        match ner {
            Ner::Person => AnswerType::Person,
            Ner::Location => AnswerType::Location,
            Ner::Date => AnswerType::Date,
            Ner::Number => AnswerType::Number,
            Ner::Organization | Ner::Misc | Ner::O => AnswerType::Thing,
        }
    }

    pub fn wh_word(self) -> &'static str {
        match self {
            AnswerType::Person => "who",
            AnswerType::Location => "where",
            AnswerType::Date => "when",
            AnswerType::Number => "how",
            AnswerType::Thing => "what",
        }
    }
}

/// First wh-word of a tokenized question.
pub fn question_wh<S: AsRef<str>>(tokens: &[S]) -> Option<&'static str> {
    tokens
        .iter()
        .find_map(|t| WH_WORDS.iter().copied().find(|w| *w == t.as_ref()))
}

/// 1 when the question's first wh-word is the one expected for the answer type.
pub fn wh_match_reward<S: AsRef<str>>(tokens: &[S], answer: AnswerType) -> f64 {
    if question_wh(tokens) == Some(answer.wh_word()) {
        1.0
    } else {
        0.0
    }
}
