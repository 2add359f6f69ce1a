//! Generation metrics, SQuAD-style answer scoring and QA-based evaluation.

mod metrics;
mod pipeline;

pub use metrics::{
    answerability, bleu4, em_f1, q_bleu1, rouge_l, sentence_bleu4, squad_normalize, BleuMode,
    BleuScore, MetricReport, QBleuConfig, FUNCTION_WORDS, ROUGE_BETA,
};
pub use pipeline::{
    check_no_leakage, evaluate_qa, evaluate_qg, qa_based_qg_eval, qa_config_digest,
    score_predictions, shuffle_questions, train_and_evaluate_qa, GeneratedQuestion, Prediction,
    QAEvalReport, QgEvalReport,
};
