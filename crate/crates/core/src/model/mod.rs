//! The question-generation network: feature embeddings, a bidirectional
//! encoder with gated self-attention, and an attention decoder with maxout
//! output, a tied frozen projection and a copy gate.

mod config;
mod qg;

pub use config::QgConfig;
pub(crate) use qg::check_same_layout;
pub use qg::{
    DecoderState, Encoded, PreparedSource, QgModel, SourceEncoding, StateValues, StepOutput,
};

pub mod check;
