use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};
use crate::nn::RngState;

/// Indices into the ground-truth and synthetic pools for one minibatch.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MixedBatch {
    pub epoch: usize,
    pub ground_truth: Vec<usize>,
    pub synthetic: Vec<usize>,
}

impl MixedBatch {
    pub fn len(&self) -> usize {
        self.ground_truth.len() + self.synthetic.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Half ground truth, half synthetic: `ceil(B/2)` + `floor(B/2)`. One epoch is
/// one shuffled pass over the ground truth; the synthetic pool is reshuffled
/// and cycled on its own. The last batch of an epoch, when short, takes as
/// many synthetic examples as its ground-truth part allows under the same
/// rule.
#[derive(Debug, Clone)]
pub struct MixingIterator {
    gt_len: usize,
    syn_len: usize,
    batch_size: usize,
    rng: RngState,
    syn_order: Vec<usize>,
    syn_pos: usize,
    epoch: usize,
}

impl MixingIterator {
    pub fn new(gt_len: usize, syn_len: usize, batch_size: usize, seed: u64) -> Result<Self> {
        if gt_len == 0 {
            bail!(
                InvalidArgument,
                "mixing needs a non-empty ground-truth pool"
            );
        }
        if batch_size == 0 {
            bail!(InvalidArgument, "batch size must be at least 1");
        }
        if syn_len > 0 && batch_size < 2 {
            bail!(InvalidArgument, "a mixed batch needs room for both pools");
        }
        Ok(Self {
            gt_len,
            syn_len,
            batch_size,
            rng: RngState::new(seed),
            syn_order: Vec::new(),
            syn_pos: 0,
            epoch: 0,
        })
    }

    pub fn ground_truth_per_batch(&self) -> usize {
        if self.syn_len == 0 {
            self.batch_size
        } else {
            self.batch_size.div_ceil(2)
        }
    }

    fn next_synthetic(&mut self) -> usize {
        if self.syn_pos == self.syn_order.len() {
            self.syn_order = (0..self.syn_len).collect();
            self.rng.shuffle(&mut self.syn_order);
            self.syn_pos = 0;
        }
        self.syn_pos += 1;
        self.syn_order[self.syn_pos - 1]
    }

    pub fn next_epoch(&mut self) -> Vec<MixedBatch> {
        let mut gt: Vec<usize> = (0..self.gt_len).collect();
        self.rng.shuffle(&mut gt);
        let per = self.ground_truth_per_batch();
        let mut out = Vec::new();
        for chunk in gt.chunks(per) {
            let n_syn = if self.syn_len == 0 {
                0
            } else if chunk.len() == per {
                self.batch_size / 2
            } else {
                // largest count s with ceil((g+s)/2) = g
                chunk.len()
            };
            let synthetic = (0..n_syn).map(|_| self.next_synthetic()).collect();
            out.push(MixedBatch {
                epoch: self.epoch,
                ground_truth: chunk.to_vec(),
                synthetic,
            });
        }
        self.epoch += 1;
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MixingAudit {
    pub batches: usize,
    pub rule_violations: usize,
    pub epochs: usize,
    /// Epochs in which some ground-truth example was missing or repeated.
    pub coverage_violations: usize,
}

impl MixingAudit {
    pub fn passed(&self) -> bool {
        self.batches > 0 && self.rule_violations == 0 && self.coverage_violations == 0
    }
}

/// Checks batch composition against the ceil/floor rule (full batches must
/// also have size `batch_size`) and that each epoch covers the ground truth
/// exactly once.
pub fn audit_mixing(
    batches: &[MixedBatch],
    gt_len: usize,
    syn_len: usize,
    batch_size: usize,
) -> MixingAudit {
    let mut rule_violations = 0;
    let mut counts: Vec<Vec<usize>> = Vec::new();
    for b in batches {
        let (g, s) = (b.ground_truth.len(), b.synthetic.len());
        let ok = if syn_len == 0 {
            s == 0 && g >= 1 && g <= batch_size
        } else {
            let n = g + s;
            n <= batch_size && g == n.div_ceil(2) && s == n / 2 && s > 0
        };
        let full_ok = syn_len == 0 || g < batch_size.div_ceil(2) || g + s == batch_size;
        let in_range =
            b.ground_truth.iter().all(|&i| i < gt_len) && b.synthetic.iter().all(|&i| i < syn_len);
        if !(ok && full_ok && in_range) {
            rule_violations += 1;
        }
        while counts.len() <= b.epoch {
            counts.push(alloc::vec![0; gt_len]);
        }
        for &i in &b.ground_truth {
            if i < gt_len {
                counts[b.epoch][i] += 1;
            }
        }
    }
    let coverage_violations = counts.iter().filter(|c| c.iter().any(|&n| n != 1)).count();
    MixingAudit {
        batches: batches.len(),
        rule_violations,
        epochs: counts.len(),
        coverage_violations,
    }
}
