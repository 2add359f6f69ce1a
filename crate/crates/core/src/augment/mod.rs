//! Synthetic QA data: questions generated for labeled or unlabeled
//! contexts, scored by a frozen QA model and filtered by that score.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::decode::{beam_search, diverse_beam_search, DecodeConfig, QgStepper};
use crate::error::{bail, Result};
use crate::model::QgModel;
use crate::reward::QaModel;
use crate::text::{tokenize, tokenize_example, QAExample, Tagger, TokenizedExample};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Existing,
    New,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticExample {
    #[serde(flatten)]
    pub example: QAExample,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub qap_score: Option<f64>,
    pub source: Source,
    /// 1-based rank among the generator's beam outputs.
    pub beam_rank: usize,
    pub generator_id: String,
    /// Tokenized gold question of the same context and answer, kept only to
    /// drop generated copies of it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_question: Option<String>,
}

/// Lowercase and collapse whitespace.
pub fn normalize_question(q: &str) -> String {
    q.to_lowercase()
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
}

fn token_string(text: &str) -> String {
    tokenize(text)
        .into_iter()
        .map(|t| t.text)
        .collect::<Vec<_>>()
        .join(" ")
}

fn check_aligned(raw: &[QAExample], tok: &[TokenizedExample]) -> Result<()> {
    if raw.len() != tok.len() {
        bail!(
            InvalidArgument,
            "{} raw examples vs {} tokenized",
            raw.len(),
            tok.len()
        );
    }
    if let Some((a, b)) = raw.iter().zip(tok).find(|(a, b)| a.id != b.id) {
        bail!(
            InvalidArgument,
            "example ids {} and {} are not aligned",
            a.id,
            b.id
        );
    }
    Ok(())
}

/// Distinct questions from a beam, best first, as `(rank, text)`.
fn beam_questions(
    model: &QgModel,
    ex: &TokenizedExample,
    cfg: &DecodeConfig,
) -> Result<Vec<(usize, String)>> {
    let src = model.prepare(ex);
    let stepper = QgStepper::new(model, &src)?;
    let hyps = if cfg.diversity > 0.0 {
        diverse_beam_search(&stepper, cfg)?
    } else {
        beam_search(&stepper, cfg)?
    };
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for (rank, h) in hyps.iter().enumerate() {
        let q = model.detokenize(&src, &h.tokens).join(" ");
        if seen.insert(q.clone()) {
            out.push((rank + 1, q));
        }
    }
    Ok(out)
}

fn synthetic(
    raw: &QAExample,
    rank: usize,
    q: String,
    source: Source,
    gen: &str,
) -> SyntheticExample {
    SyntheticExample {
        example: QAExample {
            id: format!("{}-q{}", raw.id, rank),
            context: raw.context.clone(),
            question: Some(q),
            answer_text: raw.answer_text.clone(),
            answer_start: raw.answer_start,
        },
        qap_score: None,
        source,
        beam_rank: rank,
        generator_id: gen.into(),
        gold_question: raw.question.as_deref().map(token_string),
    }
}

/// Every beam output for every labeled example, with repeats of the same
/// question string for one example removed.
pub fn generate_from_existing(
    model: &QgModel,
    raw: &[QAExample],
    tokenized: &[TokenizedExample],
    cfg: &DecodeConfig,
    generator_id: &str,
) -> Result<Vec<SyntheticExample>> {
    check_aligned(raw, tokenized)?;
    let mut out = Vec::new();
    for (r, t) in raw.iter().zip(tokenized) {
        for (rank, q) in beam_questions(model, t, cfg)? {
            out.push(synthetic(r, rank, q, Source::Existing, generator_id));
        }
    }
    Ok(out)
}

/// The `top_k` best distinct beam questions for each unlabeled context.
pub fn generate_from_new(
    model: &QgModel,
    raw: &[QAExample],
    tokenized: &[TokenizedExample],
    cfg: &DecodeConfig,
    top_k: usize,
    generator_id: &str,
) -> Result<Vec<SyntheticExample>> {
    check_aligned(raw, tokenized)?;
    if let Some(r) = raw.iter().find(|r| r.question.is_some()) {
        bail!(Data, "unlabeled record {} already has a question", r.id);
    }
    let mut out = Vec::new();
    for (r, t) in raw.iter().zip(tokenized) {
        for (rank, q) in beam_questions(model, t, cfg)?
            .into_iter()
            .take(top_k.max(1))
        {
            out.push(synthetic(r, rank, q, Source::New, generator_id));
        }
    }
    Ok(out)
}

/// Annotates every example with the QA model's probability of its answer
/// span given the generated question.
pub fn qap_score_all(
    synthetic: &[SyntheticExample],
    qa: &QaModel,
    tagger: &dyn Tagger,
) -> Result<Vec<SyntheticExample>> {
    synthetic
        .iter()
        .map(|s| {
            let t = tokenize_example(&s.example, &qa.vocab, tagger)?;
            let score = qa.qap(&qa.instance(&t)?)?;
            Ok(SyntheticExample {
                qap_score: Some(score),
                ..s.clone()
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterConfig {
    pub epsilon: f64,
    pub dedup: bool,
}

impl FilterConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.epsilon) {
            bail!(InvalidArgument, "epsilon {} outside [0, 1]", self.epsilon);
        }
        Ok(())
    }
}

/// Thresholds of the default sweep.
pub const EPSILON_GRID: [f64; 5] = [0.0, 0.2, 0.4, 0.6, 0.8];

/// Keeps examples with `qap_score >= epsilon`. With `dedup`, copies of the
/// gold question are dropped and of the examples sharing a (context, answer,
/// question) triple only the highest-scoring one (earliest on ties) is a
/// candidate, so the kept sets nest as `epsilon` grows.
pub fn filter(synthetic: &[SyntheticExample], cfg: &FilterConfig) -> Result<Vec<SyntheticExample>> {
    cfg.validate()?;
    let mut scores = Vec::with_capacity(synthetic.len());
    for s in synthetic {
        let Some(score) = s.qap_score else {
            bail!(Data, "synthetic example {} has no QAP score", s.example.id);
        };
        scores.push(score);
    }
    let mut best: BTreeMap<(String, usize, String, String), usize> = BTreeMap::new();
    if cfg.dedup {
        for (i, s) in synthetic.iter().enumerate() {
            let q = normalize_question(s.example.question.as_deref().unwrap_or(""));
            if s.gold_question
                .as_deref()
                .map(normalize_question)
                .as_deref()
                == Some(q.as_str())
            {
                continue;
            }
            let key = (
                s.example.context.clone(),
                s.example.answer_start,
                s.example.answer_text.clone(),
                q,
            );
            let e = best.entry(key).or_insert(i);
            if scores[i] > scores[*e] {
                *e = i;
            }
        }
    }
    let chosen: BTreeSet<usize> = best.into_values().collect();
    Ok(synthetic
        .iter()
        .enumerate()
        .filter(|&(i, _)| scores[i] >= cfg.epsilon && (!cfg.dedup || chosen.contains(&i)))
        .map(|(_, s)| s.clone())
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterReport {
    pub epsilon: f64,
    pub kept: usize,
    pub dropped: usize,
    pub mean_qap: f64,
}

pub fn filter_report(
    input: &[SyntheticExample],
    kept: &[SyntheticExample],
    epsilon: f64,
) -> FilterReport {
    let mean_qap = if kept.is_empty() {
        0.0
    } else {
        kept.iter().filter_map(|s| s.qap_score).sum::<f64>() / kept.len() as f64
    };
    FilterReport {
        epsilon,
        kept: kept.len(),
        dropped: input.len() - kept.len(),
        mean_qap,
    }
}

pub fn sweep(
    synthetic: &[SyntheticExample],
    grid: &[f64],
    dedup: bool,
) -> Result<Vec<FilterReport>> {
    grid.iter()
        .map(|&epsilon| {
            let kept = filter(synthetic, &FilterConfig { epsilon, dedup })?;
            Ok(filter_report(synthetic, &kept, epsilon))
        })
        .collect()
}

/// Ground truth and synthetic data kept apart for the minibatch mixer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SemiDataset {
    pub ground_truth: Vec<QAExample>,
    pub synthetic: Vec<SyntheticExample>,
}

impl SemiDataset {
    pub fn len(&self) -> usize {
        self.ground_truth.len() + self.synthetic.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub fn build_semi_dataset(
    ground_truth: Vec<QAExample>,
    synthetic: Vec<SyntheticExample>,
) -> Result<SemiDataset> {
    let mut ids = BTreeSet::new();
    for id in ground_truth
        .iter()
        .map(|e| &e.id)
        .chain(synthetic.iter().map(|s| &s.example.id))
    {
        if !ids.insert(id.clone()) {
            bail!(Data, "duplicate example id {}", id);
        }
    }
    if let Some(e) = ground_truth.iter().find(|e| e.question.is_none()) {
        bail!(Data, "ground-truth example {} has no question", e.id);
    }
    Ok(SemiDataset {
        ground_truth,
        synthetic,
    })
}
