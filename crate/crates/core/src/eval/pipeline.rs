use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use super::{bleu4, em_f1, q_bleu1, rouge_l, BleuMode, QBleuConfig, ROUGE_BETA};
use crate::augment::generate_from_new;
use crate::decode::{beam_search, DecodeConfig, QgStepper};
use crate::error::{bail, Result};
use crate::model::QgModel;
use crate::nn::RngState;
use crate::reward::{train_qa, QaConfig, QaInstance, QaModel, QaTrainData, QpcModel};
use crate::text::{tokenize_all, vocab_from_examples, Ner, QAExample, Tagger};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub id: String,
    pub prediction: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QAEvalReport {
    /// In [0, 100].
    pub em: f64,
    /// In [0, 100].
    pub f1: f64,
    pub ids: Vec<String>,
    pub config: String,
    pub predictions: Vec<Prediction>,
}

/// EM/F1 (0..100) of predicted answers against gold answers, matched by id.
pub fn score_predictions(
    predictions: &[Prediction],
    gold: &[QAExample],
    config: &str,
) -> Result<QAEvalReport> {
    if predictions.len() != gold.len() {
        bail!(
            InvalidArgument,
            "{} predictions for {} examples",
            predictions.len(),
            gold.len()
        );
    }
    let (mut em, mut f1) = (0.0, 0.0);
    for (p, g) in predictions.iter().zip(gold) {
        if p.id != g.id {
            bail!(
                InvalidArgument,
                "prediction {} does not match example {}",
                p.id,
                g.id
            );
        }
        let (a, b) = em_f1(&p.prediction, &[g.answer_text.as_str()]);
        em += a;
        f1 += b;
    }
    let n = gold.len().max(1) as f64;
    Ok(QAEvalReport {
        em: 100.0 * em / n,
        f1: 100.0 * f1 / n,
        ids: gold.iter().map(|g| g.id.clone()).collect(),
        config: config.into(),
        predictions: predictions.to_vec(),
    })
}

pub fn qa_config_digest(cfg: &QaConfig) -> String {
    format!(
        "qa word={} ner={} hidden={} dropout={} max_span={} lr={} batch={} epochs={} patience={}",
        cfg.word_dim,
        cfg.ner_dim,
        cfg.hidden,
        cfg.dropout,
        cfg.max_span,
        cfg.lr,
        cfg.batch_size,
        cfg.max_epochs,
        cfg.patience
    )
}

/// Greedy span predictions (argmax start, then the best end within the
/// maximum span length), reported as the covered context text.
pub fn evaluate_qa(qa: &QaModel, data: &[QAExample], tagger: &dyn Tagger) -> Result<QAEvalReport> {
    let tok = tokenize_all(data, &qa.vocab, tagger)?;
    let mut preds = Vec::with_capacity(data.len());
    for (raw, t) in data.iter().zip(&tok) {
        let inst = qa.instance(t)?;
        let (s, e) = qa.predict(&inst)?;
        let chars: Vec<char> = raw.context.chars().collect();
        let text: String = chars[t.context_offsets[s].0..t.context_offsets[e].1]
            .iter()
            .collect();
        preds.push(Prediction {
            id: raw.id.clone(),
            prediction: text,
        });
    }
    score_predictions(&preds, data, &qa_config_digest(&qa.config))
}

/// Trains a fresh QA model on `train` alone and evaluates it on `dev`. The
/// last tenth of `train` (at least one example) is held out for checkpoint
/// selection, so `dev` never influences training.
pub fn train_and_evaluate_qa(
    train: &[QAExample],
    dev: &[QAExample],
    cfg: &QaConfig,
    tagger: &dyn Tagger,
    seed: u64,
) -> Result<QAEvalReport> {
    if train.len() < 2 {
        bail!(InvalidArgument, "need at least two training examples");
    }
    let hold = (train.len() / 10).max(1);
    let (fit, select) = train.split_at(train.len() - hold);
    let vocab = vocab_from_examples(fit, 1);
    let mut qa = QaModel::new(cfg.clone(), vocab, seed)?;
    let inst = |xs: &[QAExample], qa: &QaModel| -> Result<Vec<QaInstance>> {
        tokenize_all(xs, &qa.vocab, tagger)?
            .iter()
            .map(|t| qa.instance(t))
            .collect()
    };
    let fit_i = inst(fit, &qa)?;
    let sel_i = inst(select, &qa)?;
    train_qa(
        &mut qa,
        QaTrainData {
            ground_truth: &fit_i,
            synthetic: &[],
        },
        &sel_i,
        seed,
    )?;
    evaluate_qa(&qa, dev, tagger)
}

pub fn check_no_leakage(pool: &[QAExample], dev: &[QAExample]) -> Result<()> {
    let dev_ctx: BTreeSet<&str> = dev.iter().map(|e| e.context.as_str()).collect();
    if let Some(e) = pool.iter().find(|e| dev_ctx.contains(e.context.as_str())) {
        bail!(
            Data,
            "context of {} also appears in the evaluation set",
            e.id
        );
    }
    Ok(())
}

/// QG as an annotator: label `unlabeled` with the generator's top beam
/// question, train a fresh QA model on those examples only, and report its
/// EM/F1 on `real_dev`.
pub fn qa_based_qg_eval(
    qg: &QgModel,
    unlabeled: &[QAExample],
    real_dev: &[QAExample],
    decode: &DecodeConfig,
    qa_cfg: &QaConfig,
    tagger: &dyn Tagger,
    seed: u64,
) -> Result<QAEvalReport> {
    check_no_leakage(unlabeled, real_dev)?;
    let tok = tokenize_all(unlabeled, &qg.vocab, tagger)?;
    let syn = generate_from_new(qg, unlabeled, &tok, decode, 1, "qa-based-eval")?;
    let annotated: Vec<QAExample> = syn.into_iter().map(|s| s.example).collect();
    train_and_evaluate_qa(&annotated, real_dev, qa_cfg, tagger, seed)
}

/// Reassigns questions so that no example keeps its own: examples are
/// shuffled and each takes the question of the next one in the cycle.
pub fn shuffle_questions(examples: &[QAExample], seed: u64) -> Result<Vec<QAExample>> {
    if examples.len() < 2 {
        bail!(
            InvalidArgument,
            "need at least two examples to shuffle questions"
        );
    }
    if let Some(e) = examples.iter().find(|e| e.question.is_none()) {
        bail!(Data, "example {} has no question", e.id);
    }
    let mut order: Vec<usize> = (0..examples.len()).collect();
    RngState::new(seed).shuffle(&mut order);
    let mut out = examples.to_vec();
    for (k, &i) in order.iter().enumerate() {
        let donor = order[(k + 1) % order.len()];
        out[i].question = examples[donor].question.clone();
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratedQuestion {
    pub id: String,
    pub question: String,
    pub reference: String,
}

/// Corpus BLEU-4 (0..100), mean ROUGE-L (0..100), mean Q-BLEU1 (0..1) and,
/// when the reward models are given, mean QPP and QAP (0..1).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QgEvalReport {
    pub n: usize,
    pub bleu4: f64,
    pub rouge_l: f64,
    pub q_bleu1: f64,
    pub qpp: Option<f64>,
    pub qap: Option<f64>,
    pub config: String,
    pub questions: Vec<GeneratedQuestion>,
}

/// Decodes the best beam question for every example and scores it against
/// the reference. Tokens tagged as entities anywhere in `data` form the
/// Q-BLEU1 entity channel.
pub fn evaluate_qg(
    qg: &QgModel,
    data: &[QAExample],
    decode: &DecodeConfig,
    qpc: Option<&QpcModel>,
    qa: Option<&QaModel>,
    tagger: &dyn Tagger,
) -> Result<QgEvalReport> {
    if data.is_empty() {
        bail!(InvalidArgument, "no examples to evaluate");
    }
    let tok = tokenize_all(data, &qg.vocab, tagger)?;
    let mut qb = QBleuConfig::default();
    for t in &tok {
        for (w, n) in t.context_tokens.iter().zip(&t.ner_tags) {
            if *n != Ner::O {
                qb.entities.insert(w.clone());
            }
        }
    }
    let qa_tok = match qa {
        Some(m) => Some(tokenize_all(data, &m.vocab, tagger)?),
        None => None,
    };
    let (mut hyps, mut refs) = (Vec::new(), Vec::new());
    let (mut rouge, mut qbleu, mut qpp, mut qap) = (0.0, 0.0, 0.0, 0.0);
    let mut questions = Vec::with_capacity(data.len());
    for (i, t) in tok.iter().enumerate() {
        let Some(reference) = t.question_tokens.clone() else {
            bail!(Data, "example {} has no reference question", t.id);
        };
        let src = qg.prepare(t);
        let stepper = QgStepper::new(qg, &src)?;
        let best = beam_search(&stepper, decode)?;
        let hyp = best
            .first()
            .map(|h| qg.detokenize(&src, &h.tokens))
            .unwrap_or_default();
        rouge += rouge_l(&hyp, &reference);
        qbleu += q_bleu1(&hyp, &reference, &qb)?;
        if let Some(m) = qpc {
            qpp += m.qpp(&hyp, &reference)?;
        }
        if let (Some(m), Some(qt)) = (qa, &qa_tok) {
            qap += m.qap(&m.instance_with_question(&qt[i], &hyp))?;
        }
        questions.push(GeneratedQuestion {
            id: t.id.clone(),
            question: hyp.join(" "),
            reference: reference.join(" "),
        });
        hyps.push(hyp);
        refs.push(reference);
    }
    let n = data.len() as f64;
    Ok(QgEvalReport {
        n: data.len(),
        bleu4: bleu4(&hyps, &refs, BleuMode::Corpus)?.score,
        rouge_l: rouge / n,
        q_bleu1: qbleu / n,
        qpp: qpc.map(|_| qpp / n),
        qap: qa.map(|_| qap / n),
        config: format!(
            "beam={} max_len={} diversity={} block={} rouge_beta={} {}",
            decode.beam,
            decode.max_len,
            decode.diversity,
            decode.block_ngram,
            ROUGE_BETA,
            qb.digest()
        ),
        questions,
    })
}
