use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};
use crate::text::WH_WORDS;

/// ROUGE-L recall weight.
pub const ROUGE_BETA: f64 = 1.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BleuMode {
    Corpus,
    /// Add-one smoothing on 2..4-gram precisions.
    SmoothedSentence,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BleuScore {
    /// In [0, 100].
    pub score: f64,
    pub precisions: [f64; 4],
    pub brevity_penalty: f64,
    pub hyp_len: usize,
    pub ref_len: usize,
}

fn ngram_counts<S: AsRef<str>>(toks: &[S], n: usize) -> BTreeMap<Vec<&str>, usize> {
    let mut m = BTreeMap::new();
    if toks.len() >= n {
        for w in toks.windows(n) {
            *m.entry(w.iter().map(AsRef::as_ref).collect()).or_default() += 1;
        }
    }
    m
}

/// Clipped matches and hypothesis n-gram total for one order.
fn clipped<S: AsRef<str>>(hyp: &[S], reference: &[S], n: usize) -> (usize, usize) {
    let h = ngram_counts(hyp, n);
    let r = ngram_counts(reference, n);
    let matched = h
        .iter()
        .map(|(g, &c)| c.min(r.get(g).copied().unwrap_or(0)))
        .sum();
    (matched, hyp.len().saturating_sub(n - 1))
}

fn combine(
    matched: [usize; 4],
    total: [usize; 4],
    hyp_len: usize,
    ref_len: usize,
    smooth: bool,
) -> BleuScore {
    let mut precisions = [0.0; 4];
    for n in 0..4 {
        precisions[n] = if smooth && n > 0 {
            (matched[n] + 1) as f64 / (total[n] + 1) as f64
        } else if total[n] == 0 {
            0.0
        } else {
            matched[n] as f64 / total[n] as f64
        };
    }
    let brevity_penalty = if hyp_len == 0 {
        0.0
    } else if hyp_len > ref_len {
        1.0
    } else {
        libm::exp(1.0 - ref_len as f64 / hyp_len as f64)
    };
    let score = if precisions.contains(&0.0) || hyp_len == 0 {
        0.0
    } else {
        let log_mean = precisions.iter().map(|p| libm::log(*p)).sum::<f64>() / 4.0;
        100.0 * brevity_penalty * libm::exp(log_mean)
    };
    BleuScore {
        score,
        precisions,
        brevity_penalty,
        hyp_len,
        ref_len,
    }
}

/// BLEU-4 over aligned hypothesis/reference token lists. Corpus mode pools
/// n-gram counts over all pairs; sentence mode requires exactly one pair.
pub fn bleu4<S: AsRef<str>>(hyps: &[Vec<S>], refs: &[Vec<S>], mode: BleuMode) -> Result<BleuScore> {
    if hyps.len() != refs.len() {
        bail!(
            InvalidArgument,
            "{} hypotheses vs {} references",
            hyps.len(),
            refs.len()
        );
    }
    if refs.iter().any(Vec::is_empty) {
        bail!(InvalidArgument, "empty reference");
    }
    if mode == BleuMode::SmoothedSentence && hyps.len() != 1 {
        bail!(InvalidArgument, "sentence BLEU takes one hypothesis");
    }
    let mut matched = [0; 4];
    let mut total = [0; 4];
    let (mut hl, mut rl) = (0, 0);
    for (h, r) in hyps.iter().zip(refs) {
        for n in 0..4 {
            let (m, t) = clipped(h, r, n + 1);
            matched[n] += m;
            total[n] += t;
        }
        hl += h.len();
        rl += r.len();
    }
    Ok(combine(
        matched,
        total,
        hl,
        rl,
        mode == BleuMode::SmoothedSentence,
    ))
}

pub fn sentence_bleu4<S: AsRef<str>>(hyp: &[S], reference: &[S]) -> Result<f64> {
    let h: Vec<&str> = hyp.iter().map(AsRef::as_ref).collect();
    let r: Vec<&str> = reference.iter().map(AsRef::as_ref).collect();
    Ok(bleu4(&[h], &[r], BleuMode::SmoothedSentence)?.score)
}

fn lcs_len<S: AsRef<str>>(a: &[S], b: &[S]) -> usize {
    let mut prev = alloc::vec![0usize; b.len() + 1];
    let mut cur = alloc::vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x.as_ref() == y.as_ref() {
                prev[j] + 1
            } else {
                cur[j].max(prev[j + 1])
            };
        }
        core::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// LCS-based F-measure in [0, 100].
pub fn rouge_l<S: AsRef<str>>(hyp: &[S], reference: &[S]) -> f64 {
    let lcs = lcs_len(hyp, reference);
    if lcs == 0 {
        return 0.0;
    }
    let p = lcs as f64 / hyp.len() as f64;
    let r = lcs as f64 / reference.len() as f64;
    let b2 = ROUGE_BETA * ROUGE_BETA;
    100.0 * (1.0 + b2) * p * r / (r + b2 * p)
}

pub const FUNCTION_WORDS: &[&str] = &[
    "a", "an", "the", "of", "in", "on", "at", "to", "for", "by", "with", "from", "as", "and", "or",
    "is", "was", "are", "were", "be", "been", "did", "does", "do", "has", "have", "had", "it",
    "its", "this", "that", "?", ".", ",",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QBleuConfig {
    pub delta: f64,
    /// Question words, named entities, content words, function words.
    pub weights: [f64; 4],
    /// Lowercased tokens treated as named entities; numbers always are.
    pub entities: BTreeSet<String>,
}

impl Default for QBleuConfig {
    fn default() -> Self {
        Self {
            delta: 0.66,
            weights: [0.25; 4],
            entities: BTreeSet::new(),
        }
    }
}

impl QBleuConfig {
    fn channel(&self, tok: &str) -> usize {
        if WH_WORDS.contains(&tok) {
            0
        } else if self.entities.contains(tok)
            || tok.chars().next().is_some_and(|c| c.is_ascii_digit())
        {
            1
        } else if FUNCTION_WORDS.contains(&tok) {
            3
        } else {
            2
        }
    }

    pub fn digest(&self) -> String {
        alloc::format!(
            "qbleu1 delta={} weights={:?} entities={}",
            self.delta,
            self.weights,
            self.entities.len()
        )
    }
}

fn channels<'a, S: AsRef<str>>(toks: &'a [S], cfg: &QBleuConfig) -> [BTreeMap<&'a str, usize>; 4] {
    let mut ch: [BTreeMap<&str, usize>; 4] = Default::default();
    for t in toks {
        *ch[cfg.channel(t.as_ref())].entry(t.as_ref()).or_default() += 1;
    }
    ch
}

/// Weighted per-channel token overlap combined as an F-measure, in [0, 1].
pub fn answerability<S: AsRef<str>>(hyp: &[S], reference: &[S], cfg: &QBleuConfig) -> f64 {
    let (h, r) = (channels(hyp, cfg), channels(reference, cfg));
    let (mut p, mut rc) = (0.0, 0.0);
    for c in 0..4 {
        let hn: usize = h[c].values().sum();
        let rn: usize = r[c].values().sum();
        let common: usize = h[c]
            .iter()
            .map(|(t, &n)| n.min(r[c].get(t).copied().unwrap_or(0)))
            .sum();
        let ratio = |den: usize, other: usize| {
            if den > 0 {
                common as f64 / den as f64
            } else if other == 0 {
                1.0
            } else {
                0.0
            }
        };
        p += cfg.weights[c] * ratio(hn, rn);
        rc += cfg.weights[c] * ratio(rn, hn);
    }
    if p + rc == 0.0 {
        0.0
    } else {
        2.0 * p * rc / (p + rc)
    }
}

/// `delta * answerability + (1 - delta) * BLEU1 / 100`.
pub fn q_bleu1<S: AsRef<str>>(hyp: &[S], reference: &[S], cfg: &QBleuConfig) -> Result<f64> {
    let wsum: f64 = cfg.weights.iter().sum();
    if (wsum - 1.0).abs() > 1e-9 || cfg.weights.iter().any(|w| *w < 0.0) {
        bail!(
            InvalidArgument,
            "channel weights must be non-negative and sum to 1, got {}",
            wsum
        );
    }
    if !(0.0..=1.0).contains(&cfg.delta) {
        bail!(InvalidArgument, "delta {} outside [0, 1]", cfg.delta);
    }
    if reference.is_empty() {
        bail!(InvalidArgument, "empty reference");
    }
    let (m, t) = clipped(hyp, reference, 1);
    let p1 = if t == 0 { 0.0 } else { m as f64 / t as f64 };
    let bp = if hyp.is_empty() {
        0.0
    } else if hyp.len() > reference.len() {
        1.0
    } else {
        libm::exp(1.0 - reference.len() as f64 / hyp.len() as f64)
    };
    let bleu1 = bp * p1;
    Ok(cfg.delta * answerability(hyp, reference, cfg) + (1.0 - cfg.delta) * bleu1)
}

/// Lowercase, drop ASCII punctuation and the articles a/an/the, collapse
/// whitespace.
pub fn squad_normalize(text: &str) -> String {
    let lower = text.to_lowercase();
    let no_punct: String = lower
        .chars()
        .filter(|c| !c.is_ascii_punctuation())
        .collect();
    no_punct
        .split_whitespace()
        .filter(|w| !matches!(*w, "a" | "an" | "the"))
        .collect::<Vec<_>>()
        .join(" ")
}

fn token_f1(pred: &str, gold: &str) -> f64 {
    let p: Vec<&str> = pred.split_whitespace().collect();
    let g: Vec<&str> = gold.split_whitespace().collect();
    if p.is_empty() || g.is_empty() {
        return if p == g { 1.0 } else { 0.0 };
    }
    let mut counts: BTreeMap<&str, isize> = BTreeMap::new();
    for t in &g {
        *counts.entry(t).or_default() += 1;
    }
    let mut same = 0;
    for t in &p {
        if let Some(c) = counts.get_mut(t) {
            if *c > 0 {
                *c -= 1;
                same += 1;
            }
        }
    }
    if same == 0 {
        return 0.0;
    }
    let precision = same as f64 / p.len() as f64;
    let recall = same as f64 / g.len() as f64;
    2.0 * precision * recall / (precision + recall)
}

/// Exact match (0 or 1) and token F1 against the best-matching gold answer.
pub fn em_f1<S: AsRef<str>>(prediction: &str, golds: &[S]) -> (f64, f64) {
    let p = squad_normalize(prediction);
    let mut em = 0.0f64;
    let mut f1 = 0.0f64;
    for g in golds {
        let g = squad_normalize(g.as_ref());
        em = em.max(if p == g { 1.0 } else { 0.0 });
        f1 = f1.max(token_f1(&p, &g));
    }
    (em, f1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub metric: String,
    pub corpus: f64,
    pub per_example: Vec<f64>,
    pub config: String,
}

impl MetricReport {
    pub fn new(metric: &str, corpus: f64, per_example: Vec<f64>, config: &str) -> Self {
        Self {
            metric: metric.to_string(),
            corpus,
            per_example,
            config: config.to_string(),
        }
    }
}
