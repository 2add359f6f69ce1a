//! Reward environments for policy-gradient fine-tuning: paraphrase
//! probability, answering probability, sentence-level metrics and a
//! wh-word/answer-type match.

mod qa;
mod qpc;

use alloc::string::String;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

pub use qa::{
    decode_span, qa_em_f1, train_qa, QaConfig, QaEpoch, QaInstance, QaModel, QaTrainData,
    QaTrainReport,
};
pub use qpc::{
    qpc_accuracy, train_qpc, PairInstance, QpcConfig, QpcEpoch, QpcModel, QpcTrainReport,
};

use crate::error::{bail, Result};
use crate::eval::{rouge_l, sentence_bleu4};
use crate::text::{wh_match_reward, AnswerType, TokenizedExample};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum RewardKind {
    Qpp,
    Qap,
    Bleu4,
    RougeL,
    WhMatch,
}

impl RewardKind {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Qpp => "qpp",
            Self::Qap => "qap",
            Self::Bleu4 => "bleu4",
            Self::RougeL => "rougeL",
            Self::WhMatch => "wh",
        }
    }

    /// Upper end of the raw value range.
    pub fn scale(self) -> f64 {
        match self {
            Self::Bleu4 | Self::RougeL => 100.0,
            _ => 1.0,
        }
    }
}

/// A raw reward value as produced by its environment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardSignal {
    pub kind: RewardKind,
    pub value: f64,
    pub question: Vec<String>,
    pub example_id: String,
}

impl RewardSignal {
    /// Value on the common [0, 1] scale.
    pub fn normalized(&self) -> f64 {
        self.value / self.kind.scale()
    }
}

/// Smoothed sentence BLEU-4 or ROUGE-L, in [0, 100].
pub fn metric_reward<S: AsRef<str>>(kind: RewardKind, hyp: &[S], reference: &[S]) -> Result<f64> {
    match kind {
        RewardKind::Bleu4 => sentence_bleu4(hyp, reference),
        RewardKind::RougeL => Ok(rouge_l(hyp, reference)),
        _ => bail!(InvalidArgument, "{} is not a metric reward", kind.as_str()),
    }
}

/// Scores a generated question for a source example. Environments are
/// borrowed immutably, so they cannot change while they are queried.
pub enum Reward<'a> {
    Qpp(&'a QpcModel),
    Qap(&'a QaModel),
    Metric(RewardKind),
    WhMatch,
}

impl Reward<'_> {
    pub fn kind(&self) -> RewardKind {
        match self {
            Self::Qpp(_) => RewardKind::Qpp,
            Self::Qap(_) => RewardKind::Qap,
            Self::Metric(k) => *k,
            Self::WhMatch => RewardKind::WhMatch,
        }
    }

    pub fn signal(&self, ex: &TokenizedExample, question: &[String]) -> Result<RewardSignal> {
        let reference = || match &ex.question_tokens {
            Some(q) => Ok(q),
            None => bail!(Data, "example {} has no reference question", ex.id),
        };
        let value = match self {
            Self::Qpp(m) => m.qpp(question, reference()?)?,
            Self::Qap(m) => m.qap(&m.instance_with_question(ex, question))?,
            Self::Metric(k) => metric_reward(*k, question, reference()?)?,
            Self::WhMatch => {
                let ner = ex.ner_tags[ex.answer_span.0];
                wh_match_reward(question, AnswerType::from_ner(ner))
            }
        };
        if !value.is_finite() {
            bail!(
                NonFinite,
                "{} reward for {} is {}",
                self.kind().as_str(),
                ex.id,
                value
            );
        }
        Ok(RewardSignal {
            kind: self.kind(),
            value,
            question: question.to_vec(),
            example_id: ex.id.clone(),
        })
    }

    /// Reward on the [0, 1] scale.
    pub fn score(&self, ex: &TokenizedExample, question: &[String]) -> Result<f64> {
        Ok(self.signal(ex, question)?.normalized())
    }
}
