use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};
use crate::nn::RngState;
use crate::reward::RewardKind;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanStep {
    pub epoch: usize,
    pub reward: RewardKind,
    pub examples: Vec<usize>,
}

/// Minibatches for reward alternation: the reward kinds repeat in runs of
/// the given lengths, continuing across epoch boundaries.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchPlan {
    pub steps: Vec<PlanStep>,
    /// Index of the first step of every epoch.
    pub epoch_starts: Vec<usize>,
}

/// The kind of the `step`-th batch under a cycle of `(kind, run length)`.
pub fn cycle_kind(cycle: &[(RewardKind, usize)], step: usize) -> Result<RewardKind> {
    let period: usize = cycle.iter().map(|c| c.1).sum();
    if period == 0 {
        bail!(InvalidArgument, "reward cycle has no batches");
    }
    let mut r = step % period;
    for &(k, n) in cycle {
        if r < n {
            return Ok(k);
        }
        r -= n;
    }
    unreachable!("remainder is below the period")
}

impl BatchPlan {
    pub fn new(
        n_examples: usize,
        batch_size: usize,
        epochs: usize,
        cycle: &[(RewardKind, usize)],
        rng: &mut RngState,
    ) -> Result<Self> {
        if n_examples == 0 || batch_size == 0 {
            bail!(
                InvalidArgument,
                "batch plan needs examples and a positive batch size"
            );
        }
        let mut steps = Vec::new();
        let mut epoch_starts = Vec::new();
        let mut order: Vec<usize> = (0..n_examples).collect();
        for epoch in 0..epochs {
            epoch_starts.push(steps.len());
            rng.shuffle(&mut order);
            for chunk in order.chunks(batch_size) {
                let reward = cycle_kind(cycle, steps.len())?;
                steps.push(PlanStep {
                    epoch,
                    reward,
                    examples: chunk.to_vec(),
                });
            }
        }
        Ok(Self {
            steps,
            epoch_starts,
        })
    }

    pub fn epoch(&self, e: usize) -> &[PlanStep] {
        let start = self.epoch_starts[e];
        let end = self
            .epoch_starts
            .get(e + 1)
            .copied()
            .unwrap_or(self.steps.len());
        &self.steps[start..end]
    }
}
