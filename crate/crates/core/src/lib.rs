//! Semi-supervised question generation: a gated self-attention
//! sequence-to-sequence question generator with copying, reinforcement
//! fine-tuning against learned and metric rewards, and the data-augmentation
//! pipeline that feeds generated questions back into QA training.
//!
//! Everything here is `no_std` + `alloc`; file formats and the command-line
//! tool live in the `semqg` crate.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

mod error;

pub use error::{Error, Result};

pub mod augment;
pub mod decode;
pub mod eval;
pub mod model;
pub mod nn;
pub mod reward;
pub mod text;
pub mod trainer;
