//! Siamese question-paraphrase classifier.

use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};
use crate::nn::{
    adam_step, batch_gradients, AdamConfig, BiLstm, Graph, OptimState, ParamId, ParameterSet,
    RngState, Var,
};
use crate::text::{Vocabulary, PAD};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QpcConfig {
    pub word_dim: usize,
    pub hidden: usize,
    pub layers: usize,
    pub mlp_hidden: usize,
    pub dropout: f64,
    pub lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
}

impl Default for QpcConfig {
    fn default() -> Self {
        Self {
            word_dim: 32,
            hidden: 32,
            layers: 2,
            mlp_hidden: 32,
            dropout: 0.1,
            lr: 0.0004,
            batch_size: 64,
            max_epochs: 50,
            patience: 10,
        }
    }
}

impl QpcConfig {
    pub fn validate(&self) -> Result<()> {
        if [
            self.word_dim,
            self.hidden,
            self.layers,
            self.mlp_hidden,
            self.batch_size,
        ]
        .contains(&0)
        {
            bail!(InvalidArgument, "QPC sizes must be positive");
        }
        if !(0.0..1.0).contains(&self.dropout) || !(self.lr.is_finite() && self.lr > 0.0) {
            bail!(
                InvalidArgument,
                "QPC dropout must be in [0, 1) and lr positive"
            );
        }
        Ok(())
    }
}

/// A labeled question pair in QPC-vocabulary ids; `label` is 1 for paraphrases.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairInstance {
    pub a: Vec<usize>,
    pub b: Vec<usize>,
    pub label: bool,
}

#[derive(Debug, Clone, PartialEq)]
struct Layout {
    word: ParamId,
    encoder: BiLstm,
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpcModel {
    pub config: QpcConfig,
    pub vocab: Vocabulary,
    pub params: ParameterSet,
    layout: Layout,
}

impl QpcModel {
    pub fn new(config: QpcConfig, vocab: Vocabulary, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = RngState::new(seed);
        let mut p = ParameterSet::new();
        let h = config.hidden;
        let word = p.add_uniform(
            "qpc.embed.word",
            &[vocab.len(), config.word_dim],
            0.5,
            true,
            &mut rng,
        )?;
        let encoder = BiLstm::register(
            &mut p,
            "qpc.encoder",
            config.word_dim,
            h,
            config.layers,
            config.dropout,
            &mut rng,
        )?;
        let w1 = p.add_init("qpc.mlp.w1", &[config.mlp_hidden, 8 * h], true, &mut rng)?;
        let b1 = p.add_uniform("qpc.mlp.b1", &[config.mlp_hidden], 0.0, true, &mut rng)?;
        let w2 = p.add_init("qpc.mlp.w2", &[2, config.mlp_hidden], true, &mut rng)?;
        let b2 = p.add_uniform("qpc.mlp.b2", &[2], 0.0, true, &mut rng)?;
        Ok(Self {
            config,
            vocab,
            params: p,
            layout: Layout {
                word,
                encoder,
                w1,
                b1,
                w2,
                b2,
            },
        })
    }

    pub fn from_parts(config: QpcConfig, vocab: Vocabulary, params: ParameterSet) -> Result<Self> {
        let mut m = Self::new(config, vocab, 0)?;
        crate::model::check_same_layout(&m.params, &params)?;
        m.params = params;
        Ok(m)
    }

    pub fn encode_ids<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<usize> {
        let ids = self.vocab.encode(tokens);
        if ids.is_empty() {
            alloc::vec![PAD]
        } else {
            ids
        }
    }

    pub fn instance<S: AsRef<str>>(&self, a: &[S], b: &[S], label: bool) -> PairInstance {
        PairInstance {
            a: self.encode_ids(a),
            b: self.encode_ids(b),
            label,
        }
    }

    /// Max-pooled top-layer states of the shared encoder.
    pub fn encode(&self, g: &mut Graph, ids: &[usize], rng: &mut RngState) -> Result<Var> {
        let xs: Vec<Var> = ids.iter().map(|&i| g.row(self.layout.word, i)).collect();
        let out = self.layout.encoder.run(g, &xs, rng)?;
        g.max_pool(&out.outputs)
    }

    /// `[q1; q2; |q1 - q2|; q1 * q2]`.
    pub fn features(
        &self,
        g: &mut Graph,
        a: &[usize],
        b: &[usize],
        rng: &mut RngState,
    ) -> Result<Var> {
        let q1 = self.encode(g, a, rng)?;
        let q2 = self.encode(g, b, rng)?;
        let d = g.sub(q1, q2)?;
        let d = g.abs(d);
        let p = g.mul(q1, q2)?;
        Ok(g.concat(&[q1, q2, d, p]))
    }

    /// Log-probabilities of `[not paraphrase, paraphrase]`.
    pub fn forward(
        &self,
        g: &mut Graph,
        a: &[usize],
        b: &[usize],
        rng: &mut RngState,
    ) -> Result<Var> {
        let l = &self.layout;
        let f = self.features(g, a, b, rng)?;
        let hdn = g.affine(l.w1, Some(l.b1), &[f])?;
        let hdn = g.tanh(hdn);
        let z = g.affine(l.w2, Some(l.b2), &[hdn])?;
        g.log_softmax(z)
    }

    pub fn loss(&self, g: &mut Graph, inst: &PairInstance, rng: &mut RngState) -> Result<Var> {
        let lp = self.forward(g, &inst.a, &inst.b, rng)?;
        let p = g.pick(lp, usize::from(inst.label))?;
        Ok(g.scale(p, -1.0))
    }

    /// Paraphrase probability of two token sequences, without dropout.
    pub fn qpp<S: AsRef<str>>(&self, a: &[S], b: &[S]) -> Result<f64> {
        self.prob_ids(&self.encode_ids(a), &self.encode_ids(b))
    }

    pub fn prob_ids(&self, a: &[usize], b: &[usize]) -> Result<f64> {
        let mut g = Graph::new(&self.params, false);
        let mut rng = RngState::new(0);
        let lp = self.forward(&mut g, a, b, &mut rng)?;
        Ok(libm::exp(g.value(lp)[1]))
    }

    pub fn feature_values(&self, a: &[usize], b: &[usize]) -> Result<Vec<f64>> {
        let mut g = Graph::new(&self.params, false);
        let mut rng = RngState::new(0);
        let f = self.features(&mut g, a, b, &mut rng)?;
        Ok(g.value(f).to_vec())
    }
}

pub fn qpc_accuracy(model: &QpcModel, data: &[PairInstance]) -> Result<f64> {
    if data.is_empty() {
        return Ok(0.0);
    }
    let mut right = 0;
    for inst in data {
        if (model.prob_ids(&inst.a, &inst.b)? >= 0.5) == inst.label {
            right += 1;
        }
    }
    Ok(right as f64 / data.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QpcEpoch {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QpcTrainReport {
    pub best_epoch: usize,
    pub best_dev_accuracy: f64,
    pub history: Vec<QpcEpoch>,
}

/// Cross-entropy training with Adam; keeps the best-on-dev parameters.
pub fn train_qpc(
    model: &mut QpcModel,
    train: &[PairInstance],
    dev: &[PairInstance],
    seed: u64,
) -> Result<QpcTrainReport> {
    let pos = train.iter().filter(|p| p.label).count();
    if pos == 0 || pos == train.len() {
        bail!(Data, "paraphrase training data must contain both classes");
    }
    let cfg = model.config.clone();
    let mut rng = RngState::new(seed);
    let mut opt = OptimState::new(
        &model.params,
        AdamConfig {
            lr: cfg.lr,
            ..Default::default()
        },
    );
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut best = (model.params.clone(), -1.0, 0);
    let mut history = Vec::new();
    let mut since = 0;
    for epoch in 0..cfg.max_epochs {
        rng.shuffle(&mut order);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let items: Vec<&PairInstance> = chunk.iter().map(|&i| &train[i]).collect();
            let m: &QpcModel = model;
            let (loss, grads) =
                batch_gradients(&m.params, &items, true, &mut rng, |g, inst, r| {
                    m.loss(g, inst, r)
                })?;
            adam_step(&mut model.params, &grads, &mut opt)?;
            total += loss * items.len() as f64;
        }
        let dev_accuracy = qpc_accuracy(model, dev)?;
        history.push(QpcEpoch {
            epoch,
            train_loss: total / train.len() as f64,
            dev_accuracy,
        });
        if dev_accuracy > best.1 {
            best = (model.params.clone(), dev_accuracy, epoch);
            since = 0;
        } else {
            since += 1;
            if since >= cfg.patience {
                break;
            }
        }
    }
    model.params = best.0;
    Ok(QpcTrainReport {
        best_epoch: best.2,
        best_dev_accuracy: best.1,
        history,
    })
}
