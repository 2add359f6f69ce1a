use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;
use serde::{Deserialize, Serialize};

use super::block::{mask_ngrams, ngram_block};
use crate::error::{bail, Result};
use crate::model::{PreparedSource, QgModel, SourceEncoding, StateValues};
use crate::nn::RngState;
use crate::text::{BOS, EOS};

/// Anything that yields next-token log-probabilities from a state.
pub trait StepModel {
    type State: Clone;

    fn initial_state(&self) -> Self::State;

    fn bos(&self) -> usize;

    fn eos(&self) -> usize;

    fn step(&self, state: &Self::State, prev: usize) -> Result<(Vec<f64>, Self::State)>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecodeConfig {
    pub beam: usize,
    pub max_len: usize,
    /// Sibling-rank penalty; 0 gives plain beam search.
    pub diversity: f64,
    /// Block repeated n-grams of this order; 0 disables.
    pub block_ngram: usize,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        Self {
            beam: 10,
            max_len: 20,
            diversity: 0.0,
            block_ngram: 3,
        }
    }
}

impl DecodeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.beam == 0 || self.max_len == 0 {
            bail!(
                InvalidArgument,
                "beam size and max length must be at least 1"
            );
        }
        if !(self.diversity >= 0.0 && self.diversity.is_finite()) {
            bail!(
                InvalidArgument,
                "diversity penalty must be finite and non-negative"
            );
        }
        if !matches!(self.block_ngram, 0 | 2 | 3) {
            bail!(InvalidArgument, "n-gram blocking order must be 0, 2 or 3");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hypothesis {
    /// Generated tokens, including the final EOS when finished.
    pub tokens: Vec<usize>,
    /// Sum of the model's log-probabilities of `tokens`.
    pub log_prob: f64,
    pub step_log_probs: Vec<f64>,
    pub finished: bool,
    /// Rank of each token among the expansions of its parent.
    pub sibling_ranks: Vec<usize>,
    /// Steps where n-gram blocking would have removed every candidate.
    pub block_fallbacks: usize,
}

impl Hypothesis {
    fn empty() -> Self {
        Self {
            tokens: Vec::new(),
            log_prob: 0.0,
            step_log_probs: Vec::new(),
            finished: false,
            sibling_ranks: Vec::new(),
            block_fallbacks: 0,
        }
    }

    fn extend(&self, tok: usize, lp: f64, rank: usize, eos: usize) -> Self {
        let mut h = self.clone();
        h.tokens.push(tok);
        h.log_prob += lp;
        h.step_log_probs.push(lp);
        h.sibling_ranks.push(rank);
        h.finished = tok == eos;
        h
    }

    /// Tokens without the trailing EOS.
    pub fn content(&self) -> &[usize] {
        match self.tokens.split_last() {
            Some((_, rest)) if self.finished => rest,
            _ => &self.tokens,
        }
    }
}

fn prev_token<M: StepModel>(m: &M, h: &Hypothesis) -> usize {
    h.tokens.last().copied().unwrap_or_else(|| m.bos())
}

fn argmax(lp: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &p) in lp.iter().enumerate() {
        if p.is_finite() && best.is_none_or(|b| p > lp[b]) {
            best = Some(i);
        }
    }
    best
}

pub fn greedy_decode<M: StepModel>(m: &M, cfg: &DecodeConfig) -> Result<Hypothesis> {
    cfg.validate()?;
    let mut h = Hypothesis::empty();
    let mut state = m.initial_state();
    while h.tokens.len() < cfg.max_len && !h.finished {
        let (mut lp, next) = m.step(&state, prev_token(m, &h))?;
        if !mask_ngrams(&mut lp, &h.tokens, cfg.block_ngram) {
            h.block_fallbacks += 1;
        }
        let Some(tok) = argmax(&lp) else {
            bail!(NonFinite, "no finite next-token score")
        };
        h = h.extend(tok, lp[tok], 0, m.eos());
        state = next;
    }
    Ok(h)
}

/// Draws one sequence from the model; blocking (if any) renormalizes the
/// sampling distribution but the stored log-probabilities are the model's.
pub fn sample_decode<M: StepModel>(
    m: &M,
    max_len: usize,
    block_ngram: usize,
    rng: &mut RngState,
) -> Result<Hypothesis> {
    if max_len == 0 {
        bail!(InvalidArgument, "max length must be at least 1");
    }
    let mut h = Hypothesis::empty();
    let mut state = m.initial_state();
    while h.tokens.len() < max_len && !h.finished {
        let (lp, next) = m.step(&state, prev_token(m, &h))?;
        let (dist, fell_back) = ngram_block(&lp, &h.tokens, block_ngram);
        if fell_back {
            h.block_fallbacks += 1;
        }
        let weights: Vec<f64> = dist.iter().map(|&p| libm::exp(p)).collect();
        if !weights.iter().any(|w| *w > 0.0) {
            bail!(NonFinite, "sampling distribution has no mass");
        }
        let tok = rng.categorical(&weights);
        h = h.extend(tok, lp[tok], 0, m.eos());
        state = next;
    }
    Ok(h)
}

struct Live<S> {
    hyp: Hypothesis,
    state: S,
    score: f64,
}

struct Cand {
    parent: usize,
    tok: usize,
    lp: f64,
    rank: usize,
    score: f64,
    /// Score used for this step's pruning only.
    key: f64,
}

fn by_score(a: f64, b: f64) -> Ordering {
    b.total_cmp(&a)
}

/// Length-bounded beam search without length normalization. Finished
/// hypotheses stay in the pool and compete with live ones by score; all
/// surviving hypotheses are returned, best first.
pub fn beam_search<M: StepModel>(m: &M, cfg: &DecodeConfig) -> Result<Vec<Hypothesis>> {
    search(m, cfg, 0.0)
}

/// Beam search where the r-th best expansion of each parent (r = 0, 1, ...)
/// loses `cfg.diversity * r` when ranked for pruning. The penalty is not
/// carried into later steps.
pub fn diverse_beam_search<M: StepModel>(m: &M, cfg: &DecodeConfig) -> Result<Vec<Hypothesis>> {
    search(m, cfg, cfg.diversity)
}

fn search<M: StepModel>(m: &M, cfg: &DecodeConfig, diversity: f64) -> Result<Vec<Hypothesis>> {
    cfg.validate()?;
    let k = cfg.beam;
    let mut live = vec![Live {
        hyp: Hypothesis::empty(),
        state: m.initial_state(),
        score: 0.0,
    }];
    let mut done: Vec<(Hypothesis, f64)> = Vec::new();
    for t in 0..cfg.max_len {
        if live.is_empty() {
            break;
        }
        let mut cands = Vec::new();
        let mut states = Vec::with_capacity(live.len());
        for (bi, l) in live.iter_mut().enumerate() {
            let (mut lp, st) = m.step(&l.state, prev_token(m, &l.hyp))?;
            if !mask_ngrams(&mut lp, &l.hyp.tokens, cfg.block_ngram) {
                l.hyp.block_fallbacks += 1;
            }
            let mut order: Vec<usize> = (0..lp.len()).filter(|&i| lp[i].is_finite()).collect();
            order.sort_by(|&a, &b| by_score(lp[a], lp[b]).then(a.cmp(&b)));
            order.truncate(k);
            for (rank, &tok) in order.iter().enumerate() {
                let score = l.score + lp[tok];
                cands.push(Cand {
                    parent: bi,
                    tok,
                    lp: lp[tok],
                    rank,
                    score,
                    key: score - diversity * rank as f64,
                });
            }
            states.push(st);
        }
        cands.sort_by(|a, b| {
            by_score(a.key, b.key)
                .then(a.parent.cmp(&b.parent))
                .then(a.tok.cmp(&b.tok))
        });
        // merge finished and new candidates, keeping the k best
        let last = t + 1 == cfg.max_len;
        let mut next_live = Vec::new();
        let mut next_done = Vec::new();
        let (mut i, mut j) = (0, 0);
        while next_live.len() + next_done.len() < k && (i < done.len() || j < cands.len()) {
            let take_done = j >= cands.len() || (i < done.len() && done[i].1 >= cands[j].key);
            if take_done {
                next_done.push(done[i].clone());
                i += 1;
                continue;
            }
            let c = &cands[j];
            j += 1;
            let p = &live[c.parent];
            let hyp = p.hyp.extend(c.tok, c.lp, c.rank, m.eos());
            if hyp.finished || last {
                next_done.push((hyp, c.score));
            } else {
                next_live.push(Live {
                    hyp,
                    state: states[c.parent].clone(),
                    score: c.score,
                });
            }
        }
        next_done.sort_by(|a, b| by_score(a.1, b.1));
        done = next_done;
        live = next_live;
    }
    let mut out: Vec<Hypothesis> = done.into_iter().map(|(h, _)| h).collect();
    out.extend(live.into_iter().map(|l| l.hyp));
    out.sort_by(|a, b| by_score(a.log_prob, b.log_prob));
    Ok(out)
}

/// Decodes the question generator from a cached source encoding.
pub struct QgStepper<'a> {
    pub model: &'a QgModel,
    pub enc: SourceEncoding,
}

impl<'a> QgStepper<'a> {
    pub fn new(model: &'a QgModel, src: &PreparedSource) -> Result<Self> {
        Ok(Self {
            model,
            enc: model.encode_values(src)?,
        })
    }
}

impl StepModel for QgStepper<'_> {
    type State = StateValues;

    fn initial_state(&self) -> StateValues {
        self.enc.init.clone()
    }

    fn bos(&self) -> usize {
        BOS
    }

    fn eos(&self) -> usize {
        EOS
    }

    fn step(&self, state: &StateValues, prev: usize) -> Result<(Vec<f64>, StateValues)> {
        self.model.step_values(&self.enc, state, prev)
    }
}
