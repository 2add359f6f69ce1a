use alloc::string::{String, ToString};
use alloc::vec::Vec;

use super::QgConfig;
use crate::error::{bail, Result};
use crate::nn::{BiLstm, Graph, LstmCell, ParamId, ParameterSet, RngState, Var};
use crate::text::{Bio, Ner, Pos, TokenizedExample, Vocabulary, BOS, EOS, UNK};

#[derive(Debug, Clone, PartialEq)]
struct Layout {
    word: ParamId,
    bio: ParamId,
    pos: ParamId,
    ner: ParamId,
    encoder: BiLstm,
    w_u: ParamId,
    w_f: ParamId,
    w_g: ParamId,
    init_w: ParamId,
    init_b: ParamId,
    decoder: Vec<LstmCell>,
    w_a: ParamId,
    w_c: ParamId,
    w_o: ParamId,
    copy_w: ParamId,
    copy_b: ParamId,
}

impl Layout {
    fn register(
        cfg: &QgConfig,
        vocab_len: usize,
        params: &mut ParameterSet,
        rng: &mut RngState,
    ) -> Result<Self> {
        let d = cfg.hidden;
        // Frozen and shared with the output projection; unit-scale entries let
        // the bounded maxout output still produce peaked distributions.
        let word = params.add_uniform("embed.word", &[vocab_len, cfg.word_dim], 1.0, false, rng)?;
        let bio = params.add_init("embed.answer", &[Bio::ALL.len(), cfg.answer_dim], true, rng)?;
        let pos = params.add_init("embed.pos", &[Pos::ALL.len(), cfg.pos_dim], true, rng)?;
        let ner = params.add_init("embed.ner", &[Ner::ALL.len(), cfg.ner_dim], true, rng)?;
        let encoder = BiLstm::register(
            params,
            "encoder",
            cfg.embed_dim(),
            d,
            cfg.layers,
            cfg.dropout,
            rng,
        )?;
        let w_u = params.add_init("self_attn.w_u", &[2 * d, 2 * d], true, rng)?;
        let w_f = params.add_init("self_attn.w_f", &[2 * d, 4 * d], true, rng)?;
        let w_g = params.add_init("self_attn.w_g", &[2 * d, 4 * d], true, rng)?;
        let init_w = params.add_init("decoder.init.w", &[cfg.layers * d, 2 * d], true, rng)?;
        let init_b = params.add_uniform("decoder.init.b", &[cfg.layers * d], 0.0, true, rng)?;
        let mut decoder = Vec::with_capacity(cfg.layers);
        for l in 0..cfg.layers {
            let input = if l == 0 { cfg.word_dim + d } else { d };
            decoder.push(LstmCell::register(
                params,
                &alloc::format!("decoder.l{l}"),
                input,
                d,
                rng,
            )?);
        }
        let w_a = params.add_init("decoder.w_a", &[2 * d, d], true, rng)?;
        let w_c = params.add_init("decoder.w_c", &[d, 3 * d], true, rng)?;
        let w_o = params.add_init("decoder.w_o", &[2 * cfg.word_dim, 3 * d], true, rng)?;
        let copy_w = params.add_init("copy.w", &[1, 3 * d + cfg.word_dim], true, rng)?;
        let copy_b = params.add_uniform("copy.b", &[1], 0.0, true, rng)?;
        Ok(Self {
            word,
            bio,
            pos,
            ner,
            encoder,
            w_u,
            w_f,
            w_g,
            init_w,
            init_b,
            decoder,
            w_a,
            w_c,
            w_o,
            copy_w,
            copy_b,
        })
    }
}

/// Id sequences for one source paragraph, with source words outside the
/// vocabulary given temporary ids `V, V+1, ...` so they can be copied.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedSource {
    pub word_ids: Vec<usize>,
    pub bio_ids: Vec<usize>,
    pub pos_ids: Vec<usize>,
    pub ner_ids: Vec<usize>,
    pub ext_ids: Vec<usize>,
    pub oov: Vec<String>,
    pub vocab_len: usize,
}

impl PreparedSource {
    pub fn len(&self) -> usize {
        self.word_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.word_ids.is_empty()
    }

    pub fn ext_len(&self) -> usize {
        self.vocab_len + self.oov.len()
    }
}

/// Recurrent state of the decoder inside a graph.
#[derive(Debug, Clone)]
pub struct DecoderState {
    pub h: Vec<Var>,
    pub c: Vec<Var>,
    /// Attentional state of the previous step, fed back as input.
    pub s_tilde: Var,
    pub step: usize,
}

pub struct Encoded {
    pub h: Vec<Var>,
    pub hhat: Vec<Var>,
    /// Self-attention weights, one row per position.
    pub self_attn: Vec<Var>,
    pub init: DecoderState,
}

pub struct StepOutput {
    /// Probabilities over the extended vocabulary when copying, otherwise
    /// log-probabilities over the vocabulary.
    pub dist: Var,
    pub is_prob: bool,
    pub attn: Var,
    pub copy_gate: Option<Var>,
}

/// Plain-value decoder state for search.
#[derive(Debug, Clone, PartialEq)]
pub struct StateValues {
    pub h: Vec<Vec<f64>>,
    pub c: Vec<Vec<f64>>,
    pub s_tilde: Vec<f64>,
    pub step: usize,
}

/// Encoder output cached for step-by-step decoding.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceEncoding {
    pub src: PreparedSource,
    pub hhat: Vec<Vec<f64>>,
    pub init: StateValues,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QgModel {
    pub config: QgConfig,
    pub vocab: Vocabulary,
    pub params: ParameterSet,
    layout: Layout,
}

impl QgModel {
    pub fn new(config: QgConfig, vocab: Vocabulary, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = RngState::new(seed);
        let mut params = ParameterSet::new();
        let layout = Layout::register(&config, vocab.len(), &mut params, &mut rng)?;
        Ok(Self {
            config,
            vocab,
            params,
            layout,
        })
    }

    /// Reassembles a model from stored parts, checking every parameter name
    /// and shape against the configuration.
    pub fn from_parts(config: QgConfig, vocab: Vocabulary, params: ParameterSet) -> Result<Self> {
        let mut model = Self::new(config, vocab, 0)?;
        check_same_layout(&model.params, &params)?;
        let trainable: Vec<bool> = model.params.entries().iter().map(|e| e.trainable).collect();
        model.params = params;
        for (id, t) in model
            .params
            .ids()
            .collect::<Vec<_>>()
            .into_iter()
            .zip(trainable)
        {
            model.params.set_trainable(id, t);
        }
        Ok(model)
    }

    pub fn word_table(&self) -> ParamId {
        self.layout.word
    }

    /// Overwrites rows of the word table for tokens found in `vectors`;
    /// returns how many rows were replaced.
    pub fn import_word_vectors<'a>(
        &mut self,
        vectors: impl IntoIterator<Item = (&'a str, &'a [f64])>,
    ) -> Result<usize> {
        let dim = self.config.word_dim;
        let id = self.layout.word;
        let mut n = 0;
        for (tok, v) in vectors {
            if v.len() != dim {
                bail!(
                    Shape,
                    "vector for {:?} has {} entries, expected {}",
                    tok,
                    v.len(),
                    dim
                );
            }
            if let Some(row) = self.vocab.get(tok) {
                self.params.get_mut(id).row_mut(row).copy_from_slice(v);
                n += 1;
            }
        }
        Ok(n)
    }

    pub fn prepare(&self, ex: &TokenizedExample) -> PreparedSource {
        let v = self.vocab.len();
        let mut oov: Vec<String> = Vec::new();
        let ext_ids = ex
            .context_tokens
            .iter()
            .zip(&ex.context_ids)
            .map(|(tok, &id)| {
                if id != UNK || tok == "<unk>" {
                    return id;
                }
                match oov.iter().position(|o| o == tok) {
                    Some(k) => v + k,
                    None => {
                        oov.push(tok.clone());
                        v + oov.len() - 1
                    }
                }
            })
            .collect();
        PreparedSource {
            word_ids: ex.context_ids.clone(),
            bio_ids: ex.bio_tags.iter().map(|t| t.id()).collect(),
            pos_ids: ex.pos_tags.iter().map(|t| t.id()).collect(),
            ner_ids: ex.ner_tags.iter().map(|t| t.id()).collect(),
            ext_ids,
            oov,
            vocab_len: v,
        }
    }

    /// Target ids (extended when copying is on) followed by EOS, truncated to
    /// the maximum question length.
    pub fn target_ids<S: AsRef<str>>(&self, src: &PreparedSource, question: &[S]) -> Vec<usize> {
        let mut out: Vec<usize> = question
            .iter()
            .map(|t| {
                let t = t.as_ref();
                match self.vocab.get(t) {
                    Some(id) => id,
                    None if self.config.copy => src
                        .oov
                        .iter()
                        .position(|o| o == t)
                        .map_or(UNK, |k| src.vocab_len + k),
                    None => UNK,
                }
            })
            .collect();
        out.truncate(self.config.max_question_len - 1);
        out.push(EOS);
        out
    }

    pub fn token_text(&self, src: &PreparedSource, id: usize) -> String {
        if id < self.vocab.len() {
            self.vocab.token(id).to_string()
        } else {
            src.oov
                .get(id - self.vocab.len())
                .cloned()
                .unwrap_or_else(|| "<unk>".to_string())
        }
    }

    /// Question tokens for a decoded id sequence, without the trailing EOS.
    pub fn detokenize(&self, src: &PreparedSource, ids: &[usize]) -> Vec<String> {
        ids.iter()
            .take_while(|&&t| t != EOS)
            .map(|&t| self.token_text(src, t))
            .collect()
    }

    /// `e_i = [w_i; a_i; p_i; n_i]` for every source position.
    pub fn embed(&self, g: &mut Graph, src: &PreparedSource) -> Result<Vec<Var>> {
        let l = &self.layout;
        let checks = [
            (&src.word_ids, self.vocab.len(), "word"),
            (&src.bio_ids, Bio::ALL.len(), "answer tag"),
            (&src.pos_ids, Pos::ALL.len(), "POS tag"),
            (&src.ner_ids, Ner::ALL.len(), "NER tag"),
        ];
        for (ids, n, what) in checks {
            if ids.len() != src.word_ids.len() {
                bail!(
                    Shape,
                    "{} sequence length differs from the word sequence",
                    what
                );
            }
            if let Some(bad) = ids.iter().find(|&&i| i >= n) {
                bail!(InvalidArgument, "unknown {} id {}", what, bad);
            }
        }
        let mut out = Vec::with_capacity(src.len());
        for i in 0..src.len() {
            let parts = [
                g.row(l.word, src.word_ids[i]),
                g.row(l.bio, src.bio_ids[i]),
                g.row(l.pos, src.pos_ids[i]),
                g.row(l.ner, src.ner_ids[i]),
            ];
            out.push(g.concat(&parts));
        }
        Ok(out)
    }

    /// Two-layer bidirectional encoder; returns `H` plus the top layer's final
    /// forward and backward states.
    pub fn encode(
        &self,
        g: &mut Graph,
        xs: &[Var],
        rng: &mut RngState,
    ) -> Result<(Vec<Var>, Var, Var)> {
        let out = self.layout.encoder.run(g, xs, rng)?;
        Ok((out.outputs, out.last_forward, out.first_backward))
    }

    /// Gated self-attention over `H`; returns `Ĥ` and each position's weights.
    pub fn self_attend(&self, g: &mut Graph, h: &[Var]) -> Result<(Vec<Var>, Vec<Var>)> {
        let l = &self.layout;
        let mut hhat = Vec::with_capacity(h.len());
        let mut alphas = Vec::with_capacity(h.len());
        for &hi in h {
            let q = g.affine(l.w_u, None, &[hi])?;
            let scores = g.scores(h, q)?;
            let alpha = g.softmax(scores)?;
            let u = g.weighted_sum(h, alpha)?;
            let f = g.affine(l.w_f, None, &[hi, u])?;
            let f = g.tanh(f);
            let gate = g.affine(l.w_g, None, &[hi, u])?;
            let gate = g.sigmoid(gate);
            hhat.push(g.interp(gate, f, hi)?);
            alphas.push(alpha);
        }
        Ok((hhat, alphas))
    }

    pub fn encode_source(
        &self,
        g: &mut Graph,
        src: &PreparedSource,
        rng: &mut RngState,
    ) -> Result<Encoded> {
        if src.is_empty() {
            bail!(Shape, "empty source paragraph");
        }
        let xs = self.embed(g, src)?;
        let (h, fwd, bwd) = self.encode(g, &xs, rng)?;
        let (hhat, self_attn) = self.self_attend(g, &h)?;
        let d = self.config.hidden;
        let init = g.affine(self.layout.init_w, Some(self.layout.init_b), &[fwd, bwd])?;
        let init = g.tanh(init);
        let mut hs = Vec::with_capacity(self.config.layers);
        let mut cs = Vec::with_capacity(self.config.layers);
        for l in 0..self.config.layers {
            hs.push(g.slice(init, l * d, d)?);
            cs.push(g.zeros(d));
        }
        let s_tilde = g.zeros(d);
        Ok(Encoded {
            h,
            hhat,
            self_attn,
            init: DecoderState {
                h: hs,
                c: cs,
                s_tilde,
                step: 0,
            },
        })
    }

    /// One decoder step given the previous output token.
    pub fn decode_step(
        &self,
        g: &mut Graph,
        hhat: &[Var],
        src: &PreparedSource,
        state: &DecoderState,
        prev: usize,
        rng: &mut RngState,
    ) -> Result<(StepOutput, DecoderState)> {
        let l = &self.layout;
        let prev_row = if prev < self.vocab.len() { prev } else { UNK };
        let y = g.row(l.word, prev_row);
        let mut input = g.concat(&[y, state.s_tilde]);
        let mut hs = Vec::with_capacity(l.decoder.len());
        let mut cs = Vec::with_capacity(l.decoder.len());
        for (k, cell) in l.decoder.iter().enumerate() {
            let x = g.dropout(input, self.config.dropout, rng)?;
            let (h, c) = cell.step(g, &[x], state.h[k], state.c[k])?;
            hs.push(h);
            cs.push(c);
            input = h;
        }
        let s = input;
        let q = g.affine(l.w_a, None, &[s])?;
        let scores = g.scores(hhat, q)?;
        let attn = g.softmax(scores)?;
        let ctx = g.weighted_sum(hhat, attn)?;
        let s_tilde = g.affine(l.w_c, None, &[ctx, s])?;
        let s_tilde = g.tanh(s_tilde);
        let o = g.affine(l.w_o, None, &[ctx, s])?;
        let o = g.tanh(o);
        let o = g.maxout(o)?;
        let logits = g.affine(l.word, None, &[o])?;
        let next = DecoderState {
            h: hs,
            c: cs,
            s_tilde,
            step: state.step + 1,
        };
        if !self.config.copy {
            let dist = g.log_softmax(logits)?;
            return Ok((
                StepOutput {
                    dist,
                    is_prob: false,
                    attn,
                    copy_gate: None,
                },
                next,
            ));
        }
        let vocab = g.softmax(logits)?;
        let gate = g.affine(l.copy_w, Some(l.copy_b), &[ctx, s, y])?;
        let gate = g.sigmoid(gate);
        let dist = g.copy_mix(vocab, attn, gate, &src.ext_ids, src.ext_len())?;
        Ok((
            StepOutput {
                dist,
                is_prob: true,
                attn,
                copy_gate: Some(gate),
            },
            next,
        ))
    }

    /// `log p(token)` from a step's output distribution.
    pub fn token_log_prob(&self, g: &mut Graph, out: &StepOutput, token: usize) -> Result<Var> {
        let p = g.pick(out.dist, token)?;
        Ok(if out.is_prob { g.log(p) } else { p })
    }

    /// Per-step `log p(y_j | y_<j)` of `target` (which should end with EOS).
    pub fn forward_teacher_forced(
        &self,
        g: &mut Graph,
        src: &PreparedSource,
        target: &[usize],
        rng: &mut RngState,
    ) -> Result<Vec<Var>> {
        if target.is_empty() {
            bail!(InvalidArgument, "empty target sequence");
        }
        let enc = self.encode_source(g, src, rng)?;
        let mut state = enc.init.clone();
        let mut prev = BOS;
        let mut out = Vec::with_capacity(target.len());
        for &t in target {
            let (step, next) = self.decode_step(g, &enc.hhat, src, &state, prev, rng)?;
            out.push(self.token_log_prob(g, &step, t)?);
            state = next;
            prev = t;
        }
        Ok(out)
    }

    /// Mean negative log-likelihood of the per-step log-probabilities.
    pub fn ml_loss(&self, g: &mut Graph, log_probs: &[Var]) -> Result<Var> {
        let m = g.mean(log_probs)?;
        Ok(g.scale(m, -1.0))
    }

    /// Runs the encoder once, keeping plain values for repeated decoding.
    pub fn encode_values(&self, src: &PreparedSource) -> Result<SourceEncoding> {
        let mut g = Graph::new(&self.params, false);
        let mut rng = RngState::new(0);
        let enc = self.encode_source(&mut g, src, &mut rng)?;
        let vals = |g: &Graph, v: &[Var]| v.iter().map(|&x| g.value(x).to_vec()).collect();
        Ok(SourceEncoding {
            src: src.clone(),
            hhat: vals(&g, &enc.hhat),
            init: StateValues {
                h: vals(&g, &enc.init.h),
                c: vals(&g, &enc.init.c),
                s_tilde: g.value(enc.init.s_tilde).to_vec(),
                step: 0,
            },
        })
    }

    /// Log-probabilities of the next token (over the extended vocabulary when
    /// copying) and the following state.
    pub fn step_values(
        &self,
        enc: &SourceEncoding,
        state: &StateValues,
        prev: usize,
    ) -> Result<(Vec<f64>, StateValues)> {
        let mut g = Graph::new(&self.params, false);
        let mut rng = RngState::new(0);
        let hhat: Vec<Var> = enc.hhat.iter().map(|v| g.input(v)).collect();
        let st = DecoderState {
            h: state.h.iter().map(|v| g.input(v)).collect(),
            c: state.c.iter().map(|v| g.input(v)).collect(),
            s_tilde: g.input(&state.s_tilde),
            step: state.step,
        };
        let (out, next) = self.decode_step(&mut g, &hhat, &enc.src, &st, prev, &mut rng)?;
        let dist = g.value(out.dist);
        let logp = if out.is_prob {
            dist.iter().map(|&p| libm::log(p)).collect()
        } else {
            dist.to_vec()
        };
        let vals = |v: &[Var]| v.iter().map(|&x| g.value(x).to_vec()).collect();
        let next = StateValues {
            h: vals(&next.h),
            c: vals(&next.c),
            s_tilde: g.value(next.s_tilde).to_vec(),
            step: next.step,
        };
        Ok((logp, next))
    }
}

pub(crate) fn check_same_layout(want: &ParameterSet, got: &ParameterSet) -> Result<()> {
    if want.len() != got.len() {
        bail!(
            Data,
            "checkpoint has {} parameters, model expects {}",
            got.len(),
            want.len()
        );
    }
    for (a, b) in want.entries().iter().zip(got.entries()) {
        if a.name != b.name || a.tensor.shape() != b.tensor.shape() {
            bail!(
                Data,
                "checkpoint parameter {} {:?} does not match expected {} {:?}",
                b.name,
                b.tensor.shape(),
                a.name,
                a.tensor.shape()
            );
        }
    }
    Ok(())
}
