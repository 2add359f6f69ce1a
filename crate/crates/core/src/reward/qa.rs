//! Extractive span model: a question vector conditions a recurrent context
//! encoder whose states feed independent start and end heads.

use alloc::string::String;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};
use crate::eval::em_f1;
use crate::nn::{
    adam_step, batch_gradients, AdamConfig, BiLstm, Graph, OptimState, ParamId, ParameterSet,
    RngState, Var,
};
use crate::text::{Ner, TokenizedExample, Vocabulary, PAD};
use crate::trainer::{MixedBatch, MixingIterator};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QaConfig {
    pub word_dim: usize,
    pub ner_dim: usize,
    pub hidden: usize,
    pub dropout: f64,
    pub max_span: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
}

impl Default for QaConfig {
    fn default() -> Self {
        Self {
            word_dim: 32,
            ner_dim: 8,
            hidden: 32,
            dropout: 0.2,
            max_span: 10,
            lr: 0.001,
            batch_size: 32,
            max_epochs: 60,
            patience: 8,
        }
    }
}

impl QaConfig {
    pub fn validate(&self) -> Result<()> {
        if [
            self.word_dim,
            self.ner_dim,
            self.hidden,
            self.max_span,
            self.batch_size,
        ]
        .contains(&0)
        {
            bail!(InvalidArgument, "QA sizes must be positive");
        }
        if !(0.0..1.0).contains(&self.dropout) || !(self.lr.is_finite() && self.lr > 0.0) {
            bail!(
                InvalidArgument,
                "QA dropout must be in [0, 1) and lr positive"
            );
        }
        Ok(())
    }
}

/// One (context, question, span) triple in QA-vocabulary ids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QaInstance {
    pub id: String,
    pub context_tokens: Vec<String>,
    pub context_ids: Vec<usize>,
    pub ner_ids: Vec<usize>,
    /// Context token also occurs in the question.
    pub in_question: Vec<bool>,
    pub question_ids: Vec<usize>,
    /// Inclusive token span.
    pub span: (usize, usize),
}

impl QaInstance {
    pub fn answer_text(&self) -> String {
        self.context_tokens[self.span.0..=self.span.1].join(" ")
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Layout {
    word: ParamId,
    ner: ParamId,
    question: BiLstm,
    context: BiLstm,
    start_w: ParamId,
    start_b: ParamId,
    end_w: ParamId,
    end_b: ParamId,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QaModel {
    pub config: QaConfig,
    pub vocab: Vocabulary,
    pub params: ParameterSet,
    layout: Layout,
}

impl QaModel {
    pub fn new(config: QaConfig, vocab: Vocabulary, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = RngState::new(seed);
        let mut p = ParameterSet::new();
        let h = config.hidden;
        let word = p.add_uniform(
            "qa.embed.word",
            &[vocab.len(), config.word_dim],
            0.5,
            true,
            &mut rng,
        )?;
        let ner = p.add_uniform(
            "qa.embed.ner",
            &[Ner::ALL.len(), config.ner_dim],
            0.5,
            true,
            &mut rng,
        )?;
        let question = BiLstm::register(
            &mut p,
            "qa.question",
            config.word_dim,
            h,
            1,
            config.dropout,
            &mut rng,
        )?;
        let ctx_in = config.word_dim + config.ner_dim + 1 + 2 * h;
        let context =
            BiLstm::register(&mut p, "qa.context", ctx_in, h, 1, config.dropout, &mut rng)?;
        let start_w = p.add_init("qa.start.w", &[1, 2 * h], true, &mut rng)?;
        let start_b = p.add_uniform("qa.start.b", &[1], 0.0, true, &mut rng)?;
        let end_w = p.add_init("qa.end.w", &[1, 2 * h], true, &mut rng)?;
        let end_b = p.add_uniform("qa.end.b", &[1], 0.0, true, &mut rng)?;
        let layout = Layout {
            word,
            ner,
            question,
            context,
            start_w,
            start_b,
            end_w,
            end_b,
        };
        Ok(Self {
            config,
            vocab,
            params: p,
            layout,
        })
    }

    pub fn from_parts(config: QaConfig, vocab: Vocabulary, params: ParameterSet) -> Result<Self> {
        let mut m = Self::new(config, vocab, 0)?;
        crate::model::check_same_layout(&m.params, &params)?;
        m.params = params;
        Ok(m)
    }

    /// Builds an instance asking `question` about the example's answer span.
    /// An empty question is replaced by a single padding token.
    pub fn instance_with_question<S: AsRef<str>>(
        &self,
        ex: &TokenizedExample,
        question: &[S],
    ) -> QaInstance {
        let mut question_ids = self.vocab.encode(question);
        if question_ids.is_empty() {
            question_ids.push(PAD);
        }
        let in_question = ex
            .context_tokens
            .iter()
            .map(|t| question.iter().any(|q| q.as_ref() == t))
            .collect();
        QaInstance {
            id: ex.id.clone(),
            context_tokens: ex.context_tokens.clone(),
            context_ids: self.vocab.encode(&ex.context_tokens),
            ner_ids: ex.ner_tags.iter().map(|t| t.id()).collect(),
            in_question,
            question_ids,
            span: ex.answer_span,
        }
    }

    /// Instance for the example's own question; errors when it has none.
    pub fn instance(&self, ex: &TokenizedExample) -> Result<QaInstance> {
        match &ex.question_tokens {
            Some(q) => Ok(self.instance_with_question(ex, q)),
            None => bail!(Data, "example {} has no question", ex.id),
        }
    }

    /// Log-softmax start and end scores over the context positions.
    pub fn forward(
        &self,
        g: &mut Graph,
        inst: &QaInstance,
        rng: &mut RngState,
    ) -> Result<(Var, Var)> {
        let l = &self.layout;
        let m = inst.context_ids.len();
        if m == 0 || inst.ner_ids.len() != m || inst.in_question.len() != m {
            bail!(Shape, "instance {}: inconsistent context features", inst.id);
        }
        if inst.span.0 > inst.span.1 || inst.span.1 >= m {
            bail!(
                InvalidArgument,
                "instance {}: span {:?} outside {} tokens",
                inst.id,
                inst.span,
                m
            );
        }
        let qs: Vec<Var> = inst
            .question_ids
            .iter()
            .map(|&i| g.row(l.word, i))
            .collect();
        let qout = l.question.run(g, &qs, rng)?;
        let qvec = g.max_pool(&qout.outputs)?;
        let mut xs = Vec::with_capacity(m);
        for i in 0..m {
            let w = g.row(l.word, inst.context_ids[i]);
            let n = g.row(l.ner, inst.ner_ids[i]);
            let em = g.input(&[if inst.in_question[i] { 1.0 } else { 0.0 }]);
            xs.push(g.concat(&[w, n, em, qvec]));
        }
        let hs = l.context.run(g, &xs, rng)?.outputs;
        let mut starts = Vec::with_capacity(m);
        let mut ends = Vec::with_capacity(m);
        for &h in &hs {
            starts.push(g.affine(l.start_w, Some(l.start_b), &[h])?);
            ends.push(g.affine(l.end_w, Some(l.end_b), &[h])?);
        }
        let s = g.concat(&starts);
        let e = g.concat(&ends);
        Ok((g.log_softmax(s)?, g.log_softmax(e)?))
    }

    /// Sum of start and end cross-entropies at the gold span.
    pub fn loss(&self, g: &mut Graph, inst: &QaInstance, rng: &mut RngState) -> Result<Var> {
        let (s, e) = self.forward(g, inst, rng)?;
        let ls = g.pick(s, inst.span.0)?;
        let le = g.pick(e, inst.span.1)?;
        let t = g.add(ls, le)?;
        Ok(g.scale(t, -1.0))
    }

    /// Start and end probabilities without dropout.
    pub fn probs(&self, inst: &QaInstance) -> Result<(Vec<f64>, Vec<f64>)> {
        let mut g = Graph::new(&self.params, false);
        let mut rng = RngState::new(0);
        let (s, e) = self.forward(&mut g, inst, &mut rng)?;
        let ex = |v: &[f64]| v.iter().map(|x| libm::exp(*x)).collect();
        Ok((ex(g.value(s)), ex(g.value(e))))
    }

    /// `p_start(s*) * p_end(e*)` of the instance's span.
    pub fn qap(&self, inst: &QaInstance) -> Result<f64> {
        let (s, e) = self.probs(inst)?;
        Ok(s[inst.span.0] * e[inst.span.1])
    }

    /// Argmax start, then argmax end in `[start, start + max_span)`.
    pub fn predict(&self, inst: &QaInstance) -> Result<(usize, usize)> {
        let (s, e) = self.probs(inst)?;
        Ok(decode_span(&s, &e, self.config.max_span))
    }
}

pub fn decode_span(start: &[f64], end: &[f64], max_span: usize) -> (usize, usize) {
    let mut st = 0;
    for (i, &p) in start.iter().enumerate() {
        if p > start[st] {
            st = i;
        }
    }
    let hi = (st + max_span.max(1)).min(end.len());
    let mut en = st;
    for i in st..hi {
        if end[i] > end[en] {
            en = i;
        }
    }
    (st, en)
}

/// Training data: the ground-truth pool plus an optional synthetic pool
/// mixed half and half per batch.
pub struct QaTrainData<'a> {
    pub ground_truth: &'a [QaInstance],
    pub synthetic: &'a [QaInstance],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QaEpoch {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_em: f64,
    pub dev_f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QaTrainReport {
    pub best_epoch: usize,
    pub best_dev_em: f64,
    pub history: Vec<QaEpoch>,
    pub batches: Vec<MixedBatch>,
}

/// Mean EM and F1 (0..100) of span predictions against the gold spans.
pub fn qa_em_f1(model: &QaModel, data: &[QaInstance]) -> Result<(f64, f64)> {
    if data.is_empty() {
        return Ok((0.0, 0.0));
    }
    let (mut em, mut f1) = (0.0, 0.0);
    for inst in data {
        let (s, e) = model.predict(inst)?;
        let pred = inst.context_tokens[s..=e].join(" ");
        let (a, b) = em_f1(&pred, &[inst.answer_text()]);
        em += a;
        f1 += b;
    }
    let n = data.len() as f64;
    Ok((100.0 * em / n, 100.0 * f1 / n))
}

/// Adam on the summed start/end cross-entropy; keeps the parameters with the
/// best dev EM and stops after `patience` epochs without improvement.
pub fn train_qa(
    model: &mut QaModel,
    data: QaTrainData<'_>,
    dev: &[QaInstance],
    seed: u64,
) -> Result<QaTrainReport> {
    let cfg = model.config.clone();
    if data.ground_truth.is_empty() {
        bail!(InvalidArgument, "QA training needs ground-truth examples");
    }
    let mut rng = RngState::new(seed);
    let mut it = MixingIterator::new(
        data.ground_truth.len(),
        data.synthetic.len(),
        cfg.batch_size,
        rng.next_u64(),
    )?;
    let mut opt = OptimState::new(
        &model.params,
        AdamConfig {
            lr: cfg.lr,
            ..Default::default()
        },
    );
    let mut best = (model.params.clone(), -1.0, 0);
    let mut history = Vec::new();
    let mut all_batches = Vec::new();
    let mut since = 0;
    for epoch in 0..cfg.max_epochs {
        let mut total = 0.0;
        let mut count = 0;
        for b in it.next_epoch() {
            let items: Vec<&QaInstance> = b
                .ground_truth
                .iter()
                .map(|&i| &data.ground_truth[i])
                .chain(b.synthetic.iter().map(|&i| &data.synthetic[i]))
                .collect();
            let m: &QaModel = model;
            let (loss, grads) =
                batch_gradients(&m.params, &items, true, &mut rng, |g, inst, r| {
                    m.loss(g, inst, r)
                })?;
            adam_step(&mut model.params, &grads, &mut opt)?;
            total += loss * items.len() as f64;
            count += items.len();
            all_batches.push(b);
        }
        let (dev_em, dev_f1) = qa_em_f1(model, dev)?;
        history.push(QaEpoch {
            epoch,
            train_loss: total / count as f64,
            dev_em,
            dev_f1,
        });
        if dev_em > best.1 {
            best = (model.params.clone(), dev_em, epoch);
            since = 0;
        } else {
            since += 1;
            if since >= cfg.patience {
                break;
            }
        }
    }
    model.params = best.0;
    Ok(QaTrainReport {
        best_epoch: best.2,
        best_dev_em: best.1,
        history,
        batches: all_batches,
    })
}
