//! Greedy, sampled, beam and diverse-beam decoding over any step-wise model.

mod block;
mod search;

pub use block::{mask_ngrams, ngram_block};
pub use search::{
    beam_search, diverse_beam_search, greedy_decode, sample_decode, DecodeConfig, Hypothesis,
    QgStepper, StepModel,
};
