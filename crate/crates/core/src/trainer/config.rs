use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};
use crate::nn::{RL_LR, TEACHER_FORCING_LR};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without dev improvement before stopping.
    pub patience: usize,
    pub lr_tf: f64,
    pub lr_rl: f64,
    pub gamma_qpp: f64,
    pub gamma_qap: f64,
    /// Batches of the first and second reward per cycle (`n:m`).
    pub alt_rate: (usize, usize),
    pub seed: u64,
    pub max_grad_norm: Option<f64>,
    /// Average the sampled sequence's log-probabilities instead of summing.
    pub rl_mean_log_prob: bool,
    /// Stop teacher forcing once eval-mode training accuracy reaches this.
    pub target_train_accuracy: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 32,
            max_epochs: 50,
            patience: 10,
            lr_tf: TEACHER_FORCING_LR,
            lr_rl: RL_LR,
            gamma_qpp: 0.99,
            gamma_qap: 0.97,
            alt_rate: (3, 1),
            seed: 0,
            max_grad_norm: None,
            rl_mean_log_prob: true,
            target_train_accuracy: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.max_epochs == 0 {
            bail!(
                InvalidArgument,
                "batch size and epoch count must be positive"
            );
        }
        for (name, g) in [("gamma_qpp", self.gamma_qpp), ("gamma_qap", self.gamma_qap)] {
            if !(0.0..=1.0).contains(&g) {
                bail!(InvalidArgument, "{} = {} outside [0, 1]", name, g);
            }
        }
        if self.alt_rate.0 + self.alt_rate.1 == 0 {
            bail!(InvalidArgument, "alternation rate n:m needs n + m >= 1");
        }
        if !(self.lr_tf > 0.0 && self.lr_rl > 0.0) {
            bail!(InvalidArgument, "learning rates must be positive");
        }
        Ok(())
    }
}
