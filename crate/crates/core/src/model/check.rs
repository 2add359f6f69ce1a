//! Finite-difference checks of every differentiable block on small random
//! shapes, shared by the test suite and the `grad-check` command.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use super::{PreparedSource, QgConfig, QgModel};
use crate::error::Result;
use crate::nn::{
    grad_check, BiLstm, GradCheckOptions, GradCheckReport, Graph, LstmCell, ParameterSet, RngState,
    Var,
};
use crate::text::{Bio, Ner, Pos, Vocabulary, EOS};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockCheck {
    pub block: String,
    pub shape: String,
    pub report: GradCheckReport,
}

fn random_vec(rng: &mut RngState, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.uniform_in(-1.0, 1.0)).collect()
}

/// Random linear read-out of a list of outputs, so every entry gets a
/// distinct upstream gradient.
fn project(g: &mut Graph, outs: &[Var], weights: &[Vec<f64>]) -> Result<Var> {
    let mut terms = Vec::with_capacity(outs.len());
    for (&o, w) in outs.iter().zip(weights) {
        let r = g.input(w);
        terms.push(g.dot(o, r)?);
    }
    g.sum(&terms)
}

/// A small model with a random vocabulary and a source containing
/// out-of-vocabulary words, plus a target that copies one of them.
pub fn tiny_model(seed: u64, copy: bool) -> Result<(QgModel, PreparedSource, Vec<usize>)> {
    let mut rng = RngState::new(seed);
    let hidden = 2 * (1 + rng.below(3));
    let cfg = QgConfig {
        word_dim: 2 + 2 * rng.below(2),
        answer_dim: 2,
        pos_dim: 2,
        ner_dim: 2,
        hidden,
        layers: 1 + rng.below(2),
        dropout: 0.0,
        copy,
        max_question_len: 8,
    };
    let n_words = 6 + rng.below(4);
    let tokens: Vec<String> = (0..n_words).map(|i| format!("w{i}")).collect();
    let vocab = Vocabulary::from_tokens(tokens)?;
    let model = QgModel::new(cfg, vocab, seed.wrapping_add(1))?;
    let v = model.vocab.len();
    let len = 2 + rng.below(5);
    let mut src = PreparedSource {
        word_ids: Vec::new(),
        bio_ids: Vec::new(),
        pos_ids: Vec::new(),
        ner_ids: Vec::new(),
        ext_ids: Vec::new(),
        oov: Vec::new(),
        vocab_len: v,
    };
    let ans = rng.below(len);
    for i in 0..len {
        if i % 3 == 1 {
            // an unknown word, copyable through the extended vocabulary
            src.word_ids.push(crate::text::UNK);
            src.ext_ids.push(v + src.oov.len());
            src.oov.push(format!("oov{i}"));
        } else {
            let w = 4 + rng.below(n_words);
            src.word_ids.push(w);
            src.ext_ids.push(w);
        }
        src.bio_ids
            .push(if i == ans { Bio::B.id() } else { Bio::O.id() });
        src.pos_ids.push(rng.below(Pos::ALL.len()));
        src.ner_ids.push(rng.below(Ner::ALL.len()));
    }
    let mut target: Vec<usize> = (0..1 + rng.below(3))
        .map(|_| 4 + rng.below(n_words))
        .collect();
    if copy && !src.oov.is_empty() {
        target.push(v);
    }
    target.push(EOS);
    Ok((model, src, target))
}

/// Gradient checks of the LSTM cell, the bidirectional encoder, gated
/// self-attention, one decoder step, and the composed teacher-forced loss
/// with and without copying.
pub fn block_grad_checks(seed: u64, opts: &GradCheckOptions) -> Result<Vec<BlockCheck>> {
    let mut out = Vec::new();
    let mut rng = RngState::new(seed ^ 0x9e37_79b9);

    // LSTM cell, several steps from a random state
    {
        let input = 1 + rng.below(4);
        let hidden = 1 + rng.below(4);
        let steps = 1 + rng.below(3);
        let mut params = ParameterSet::new();
        let cell = LstmCell::register(&mut params, "cell", input, hidden, &mut rng)?;
        let xs: Vec<Vec<f64>> = (0..steps).map(|_| random_vec(&mut rng, input)).collect();
        let h0 = random_vec(&mut rng, hidden);
        let c0 = random_vec(&mut rng, hidden);
        let w: Vec<Vec<f64>> = (0..2 * steps)
            .map(|_| random_vec(&mut rng, hidden))
            .collect();
        let report = grad_check(
            &mut params,
            |g| {
                let mut h = g.input(&h0);
                let mut c = g.input(&c0);
                let mut outs = Vec::new();
                for x in &xs {
                    let x = g.input(x);
                    (h, c) = cell.step(g, &[x], h, c)?;
                    outs.push(h);
                    outs.push(c);
                }
                project(g, &outs, &w)
            },
            opts,
        )?;
        out.push(BlockCheck {
            block: "lstm_cell".into(),
            shape: format!("in={input} hidden={hidden} steps={steps}"),
            report,
        });
    }

    // stacked bidirectional encoder
    {
        let input = 1 + rng.below(4);
        let hidden = 1 + rng.below(3);
        let layers = 1 + rng.below(2);
        let len = 1 + rng.below(4);
        let mut params = ParameterSet::new();
        let enc = BiLstm::register(&mut params, "enc", input, hidden, layers, 0.0, &mut rng)?;
        let xs: Vec<Vec<f64>> = (0..len).map(|_| random_vec(&mut rng, input)).collect();
        let w: Vec<Vec<f64>> = (0..len + 2)
            .map(|_| random_vec(&mut rng, 2 * hidden))
            .collect();
        let w_last: Vec<Vec<f64>> = (0..2).map(|_| random_vec(&mut rng, hidden)).collect();
        let report = grad_check(
            &mut params,
            |g| {
                let xs: Vec<Var> = xs.iter().map(|x| g.input(x)).collect();
                let mut r = RngState::new(0);
                let o = enc.run(g, &xs, &mut r)?;
                let a = project(g, &o.outputs, &w)?;
                let b = project(g, &[o.last_forward, o.first_backward], &w_last)?;
                g.add(a, b)
            },
            opts,
        )?;
        out.push(BlockCheck {
            block: "bilstm".into(),
            shape: format!("in={input} hidden={hidden} layers={layers} len={len}"),
            report,
        });
    }

    let (mut model, src, target) = tiny_model(seed, true)?;
    let shape = format!(
        "word={} hidden={} layers={} len={} target={}",
        model.config.word_dim,
        model.config.hidden,
        model.config.layers,
        src.len(),
        target.len()
    );
    let d2 = 2 * model.config.hidden;
    let hs: Vec<Vec<f64>> = (0..src.len()).map(|_| random_vec(&mut rng, d2)).collect();

    // gated self-attention over fixed encoder states
    {
        let w: Vec<Vec<f64>> = (0..src.len()).map(|_| random_vec(&mut rng, d2)).collect();
        let m = model.clone();
        let report = grad_check(
            &mut model.params,
            |g| {
                let h: Vec<Var> = hs.iter().map(|x| g.input(x)).collect();
                let (hhat, _) = m.self_attend(g, &h)?;
                project(g, &hhat, &w)
            },
            opts,
        )?;
        out.push(BlockCheck {
            block: "self_attention".into(),
            shape: shape.clone(),
            report,
        });
    }

    // one decoder step from a random state, scoring a copied token
    {
        let m = model.clone();
        let d = m.config.hidden;
        let h0: Vec<Vec<f64>> = (0..m.config.layers)
            .map(|_| random_vec(&mut rng, d))
            .collect();
        let c0: Vec<Vec<f64>> = (0..m.config.layers)
            .map(|_| random_vec(&mut rng, d))
            .collect();
        let s0 = random_vec(&mut rng, d);
        let prev = 4;
        let tok = src.ext_len() - 1;
        let report = grad_check(
            &mut model.params,
            |g| {
                let hhat: Vec<Var> = hs.iter().map(|x| g.input(x)).collect();
                let state = super::DecoderState {
                    h: h0.iter().map(|x| g.input(x)).collect(),
                    c: c0.iter().map(|x| g.input(x)).collect(),
                    s_tilde: g.input(&s0),
                    step: 0,
                };
                let mut r = RngState::new(0);
                let (step, next) = m.decode_step(g, &hhat, &src, &state, prev, &mut r)?;
                let lp = m.token_log_prob(g, &step, tok)?;
                let s = g.sum(&next.h)?;
                let s = g.sum(&[s, next.s_tilde])?;
                let one = g.input(&alloc::vec![0.1; s0.len()]);
                let s = g.dot(s, one)?;
                g.add(lp, s)
            },
            opts,
        )?;
        out.push(BlockCheck {
            block: "decoder_step".into(),
            shape: shape.clone(),
            report,
        });
    }

    for copy in [true, false] {
        let (mut model, src, target) = tiny_model(seed.wrapping_add(17), copy)?;
        let m = model.clone();
        let report = grad_check(
            &mut model.params,
            |g| {
                let mut r = RngState::new(0);
                let lps = m.forward_teacher_forced(g, &src, &target, &mut r)?;
                m.ml_loss(g, &lps)
            },
            opts,
        )?;
        let block = if copy {
            "qg_forward_copy"
        } else {
            "qg_forward"
        };
        out.push(BlockCheck {
            block: block.into(),
            shape: format!(
                "word={} hidden={} layers={} len={} target={}",
                m.config.word_dim,
                m.config.hidden,
                m.config.layers,
                src.len(),
                target.len()
            ),
            report,
        });
    }
    Ok(out)
}
