use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QgConfig {
    pub word_dim: usize,
    pub answer_dim: usize,
    pub pos_dim: usize,
    pub ner_dim: usize,
    /// Per-direction encoder size and decoder size.
    pub hidden: usize,
    pub layers: usize,
    pub dropout: f64,
    pub copy: bool,
    pub max_question_len: usize,
}

impl Default for QgConfig {
    fn default() -> Self {
        Self {
            word_dim: 32,
            answer_dim: 8,
            pos_dim: 8,
            ner_dim: 8,
            hidden: 64,
            layers: 2,
            dropout: 0.3,
            copy: true,
            max_question_len: 20,
        }
    }
}

impl QgConfig {
    /// Dimension of `e_i = [w_i; a_i; p_i; n_i]`.
    pub fn embed_dim(&self) -> usize {
        self.word_dim + self.answer_dim + self.pos_dim + self.ner_dim
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            self.word_dim,
            self.answer_dim,
            self.pos_dim,
            self.ner_dim,
            self.hidden,
        ];
        if dims.contains(&0) {
            bail!(InvalidArgument, "model dimensions must be positive");
        }
        if !self.hidden.is_multiple_of(2) {
            bail!(InvalidArgument, "hidden size {} must be even", self.hidden);
        }
        if self.layers == 0 {
            bail!(InvalidArgument, "need at least one recurrent layer");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            bail!(InvalidArgument, "dropout {} outside [0, 1)", self.dropout);
        }
        if self.max_question_len == 0 {
            bail!(InvalidArgument, "max question length must be positive");
        }
        Ok(())
    }
}
