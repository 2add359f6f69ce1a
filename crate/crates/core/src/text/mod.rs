//! Tokenization, vocabularies, feature tags and the toy QA language.

mod example;
mod tags;
mod tokenize;
pub mod toy;
mod vocab;
mod wh;

pub use example::{
    snap_span, tokenize_all, tokenize_example, vocab_from_examples, QAExample, TokenizedExample,
};
pub use tags::{bio_tag, Bio, LexiconTagger, Ner, Pos, Tagger};
pub use tokenize::{surface_forms, token_texts, tokenize, Token};
pub use toy::{make_paraphrase_pairs, make_toy_corpus, QuestionPair, ToyCorpus, ToyLanguageSpec};
pub use vocab::{Vocabulary, BOS, EOS, PAD, RESERVED, UNK};
pub use wh::{question_wh, wh_match_reward, AnswerType, WH_WORDS};
