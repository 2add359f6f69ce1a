use alloc::string::String;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use super::tags::{bio_tag, Bio, Ner, Pos, Tagger};
use super::tokenize::{surface_forms, tokenize, Token};
use super::vocab::Vocabulary;
use crate::error::{bail, Result};

/// A paragraph, an answer inside it, and optionally a question.
/// `answer_start` is a character (not byte) offset into `context`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QAExample {
    pub id: String,
    pub context: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub question: Option<String>,
    pub answer_text: String,
    pub answer_start: usize,
}

impl QAExample {
    pub fn validate(&self) -> Result<()> {
        if self.answer_text.is_empty() {
            bail!(Data, "example {}: empty answer", self.id);
        }
        let found: String = self
            .context
            .chars()
            .skip(self.answer_start)
            .take(self.answer_text.chars().count())
            .collect();
        if found != self.answer_text {
            bail!(
                Data,
                "example {}: answer {:?} not found at offset {} (got {:?})",
                self.id,
                self.answer_text,
                self.answer_start,
                found
            );
        }
        Ok(())
    }

    pub fn answer_end(&self) -> usize {
        self.answer_start + self.answer_text.chars().count()
    }
}

/// Model-ready view of a [`QAExample`]. Question ids carry no BOS/EOS.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenizedExample {
    pub id: String,
    pub context_tokens: Vec<String>,
    /// `[start, end)` character offsets of each context token.
    pub context_offsets: Vec<(usize, usize)>,
    pub question_tokens: Option<Vec<String>>,
    /// Inclusive token indices.
    pub answer_span: (usize, usize),
    pub bio_tags: Vec<Bio>,
    pub pos_tags: Vec<Pos>,
    pub ner_tags: Vec<Ner>,
    pub context_ids: Vec<usize>,
    pub question_ids: Option<Vec<usize>>,
    /// The character span did not align with token boundaries and was widened.
    pub snapped: bool,
}

impl TokenizedExample {
    pub fn len(&self) -> usize {
        self.context_tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.context_tokens.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.context_tokens.len();
        let (s, e) = self.answer_span;
        if m == 0 || s > e || e >= m {
            bail!(
                Data,
                "example {}: span [{}, {}] invalid for {} tokens",
                self.id,
                s,
                e,
                m
            );
        }
        let lens = [
            self.context_offsets.len(),
            self.bio_tags.len(),
            self.pos_tags.len(),
            self.ner_tags.len(),
            self.context_ids.len(),
        ];
        if lens.iter().any(|&l| l != m) {
            bail!(
                Data,
                "example {}: per-token sequences disagree in length",
                self.id
            );
        }
        if self.bio_tags.iter().filter(|&&t| t == Bio::B).count() != 1 {
            bail!(Data, "example {}: BIO tags need exactly one B", self.id);
        }
        for w in self.bio_tags.windows(2) {
            if w[1] == Bio::I && w[0] == Bio::O {
                bail!(Data, "example {}: I tag not preceded by B or I", self.id);
            }
        }
        if self.bio_tags[0] == Bio::I {
            bail!(Data, "example {}: sequence starts with I", self.id);
        }
        Ok(())
    }

    /// Text of the context between the first and last token of `span`.
    pub fn span_text(&self, context: &str, span: (usize, usize)) -> String {
        let (a, _) = self.context_offsets[span.0];
        let (_, b) = self.context_offsets[span.1];
        context.chars().skip(a).take(b - a).collect()
    }

    pub fn answer_tokens(&self) -> &[String] {
        &self.context_tokens[self.answer_span.0..=self.answer_span.1]
    }
}

/// Smallest token span covering the character range `[start, end)`, and
/// whether it had to be widened.
pub fn snap_span(tokens: &[Token], start: usize, end: usize) -> Option<((usize, usize), bool)> {
    let s = tokens.iter().position(|t| t.end > start)?;
    let e = tokens.iter().rposition(|t| t.start < end)?;
    if s > e {
        return None;
    }
    let snapped = tokens[s].start != start || tokens[e].end != end;
    Some(((s, e), snapped))
}

pub fn tokenize_example(
    ex: &QAExample,
    vocab: &Vocabulary,
    tagger: &dyn Tagger,
) -> Result<TokenizedExample> {
    ex.validate()?;
    let toks = tokenize(&ex.context);
    let Some((span, snapped)) = snap_span(&toks, ex.answer_start, ex.answer_end()) else {
        bail!(Data, "example {}: answer covers no token", ex.id);
    };
    let surface = surface_forms(&ex.context, &toks);
    let (pos_tags, ner_tags) = tagger.tag(&surface);
    let context_tokens: Vec<String> = toks.iter().map(|t| t.text.clone()).collect();
    let question_tokens: Option<Vec<String>> = ex
        .question
        .as_ref()
        .map(|q| tokenize(q).into_iter().map(|t| t.text).collect());
    let out = TokenizedExample {
        id: ex.id.clone(),
        context_ids: vocab.encode(&context_tokens),
        question_ids: question_tokens.as_ref().map(|q| vocab.encode(q)),
        context_offsets: toks.iter().map(|t| (t.start, t.end)).collect(),
        bio_tags: bio_tag(toks.len(), span)?,
        context_tokens,
        question_tokens,
        answer_span: span,
        pos_tags,
        ner_tags,
        snapped,
    };
    out.validate()?;
    Ok(out)
}

pub fn tokenize_all(
    examples: &[QAExample],
    vocab: &Vocabulary,
    tagger: &dyn Tagger,
) -> Result<Vec<TokenizedExample>> {
    examples
        .iter()
        .map(|ex| tokenize_example(ex, vocab, tagger))
        .collect()
}

/// Vocabulary over the context and question tokens of `examples`.
pub fn vocab_from_examples(examples: &[QAExample], min_count: usize) -> Vocabulary {
    let mut toks: Vec<String> = Vec::new();
    for ex in examples {
        toks.extend(tokenize(&ex.context).into_iter().map(|t| t.text));
        if let Some(q) = &ex.question {
            toks.extend(tokenize(q).into_iter().map(|t| t.text));
        }
    }
    Vocabulary::build(toks.iter().map(String::as_str), min_count)
}
