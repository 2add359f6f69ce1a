use alloc::string::String;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use super::plan::{cycle_kind, BatchPlan};
use super::tf::{prepare_items, LogRecord, TfItem};
use super::TrainConfig;
use crate::decode::{greedy_decode, sample_decode, DecodeConfig, Hypothesis, QgStepper};
use crate::error::{bail, Result};
use crate::model::QgModel;
use crate::nn::{adam_step, AdamConfig, Gradients, Graph, OptimState, RngState, Var};
use crate::reward::Reward;
use crate::text::TokenizedExample;

/// `gamma * rl + (1 - gamma) * ml`.
pub fn mixed_loss(g: &mut Graph, ml: Var, rl: Var, gamma: f64) -> Result<Var> {
    check_gamma(gamma)?;
    let a = g.scale(rl, gamma);
    let b = g.scale(ml, 1.0 - gamma);
    g.add(a, b)
}

pub fn mixed_loss_value(ml: f64, rl: f64, gamma: f64) -> Result<f64> {
    check_gamma(gamma)?;
    Ok(gamma * rl + (1.0 - gamma) * ml)
}

fn check_gamma(gamma: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&gamma) {
        bail!(InvalidArgument, "mixing weight {} outside [0, 1]", gamma);
    }
    Ok(())
}

/// `-(r_s - b) * mean_j log p(y^s_j)` (a sum when `mean` is false).
pub fn rl_loss(
    g: &mut Graph,
    model: &QgModel,
    item: &TfItem,
    sample: &[usize],
    advantage: f64,
    mean: bool,
) -> Result<Var> {
    let mut rng = RngState::new(0);
    let lps = model.forward_teacher_forced(g, &item.src, sample, &mut rng)?;
    let s = if mean { g.mean(&lps)? } else { g.sum(&lps)? };
    Ok(g.scale(s, -advantage))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RlOutcome {
    pub sample: Hypothesis,
    pub greedy: Hypothesis,
    pub sample_reward: f64,
    pub greedy_reward: f64,
    pub loss: f64,
}

impl RlOutcome {
    pub fn advantage(&self) -> f64 {
        self.sample_reward - self.greedy_reward
    }
}

fn greedy_config(model: &QgModel) -> DecodeConfig {
    DecodeConfig {
        beam: 1,
        max_len: model.config.max_question_len,
        diversity: 0.0,
        block_ngram: 0,
    }
}

/// Self-critical step on one example: sample `q^s`, decode `q^g` greedily as
/// the baseline, and add `scale` times the gradient of
/// `gamma * L_RL + (1 - gamma) * L_ML` into `grads`. With `gamma = 1` and a
/// zero advantage nothing is added. Graphs run without dropout so the
/// scored distribution is the one that was sampled.
#[allow(clippy::too_many_arguments)]
pub fn rl_step(
    model: &QgModel,
    item: &TfItem,
    ex: &TokenizedExample,
    reward: &Reward<'_>,
    gamma: f64,
    mean: bool,
    rng: &mut RngState,
    grads: &mut Gradients,
    scale: f64,
) -> Result<RlOutcome> {
    check_gamma(gamma)?;
    let stepper = QgStepper::new(model, &item.src)?;
    let sample = sample_decode(&stepper, model.config.max_question_len, 0, rng)?;
    let greedy = greedy_decode(&stepper, &greedy_config(model))?;
    let rs = reward.score(ex, &model.detokenize(&item.src, &sample.tokens))?;
    let rg = reward.score(ex, &model.detokenize(&item.src, &greedy.tokens))?;
    let adv = rs - rg;
    let mut g = Graph::new(&model.params, false);
    let rl = if adv != 0.0 || gamma < 1.0 {
        Some(rl_loss(&mut g, model, item, &sample.tokens, adv, mean)?)
    } else {
        None
    };
    let loss = match (rl, gamma < 1.0) {
        (Some(rl), true) => {
            let mut r = RngState::new(0);
            let lps = model.forward_teacher_forced(&mut g, &item.src, &item.target, &mut r)?;
            let ml = model.ml_loss(&mut g, &lps)?;
            Some(mixed_loss(&mut g, ml, rl, gamma)?)
        }
        (Some(rl), false) if adv != 0.0 => Some(rl),
        _ => None,
    };
    let value = match loss {
        Some(l) => {
            g.backward_scaled(l, scale, grads)?;
            g.scalar(l)
        }
        None => 0.0,
    };
    Ok(RlOutcome {
        sample,
        greedy,
        sample_reward: rs,
        greedy_reward: rg,
        loss: value,
    })
}

/// Mean reward of greedy decodes (no n-gram blocking).
pub fn mean_greedy_reward(
    model: &QgModel,
    items: &[TfItem],
    data: &[TokenizedExample],
    reward: &Reward<'_>,
) -> Result<f64> {
    if items.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for (it, ex) in items.iter().zip(data) {
        let stepper = QgStepper::new(model, &it.src)?;
        let h = greedy_decode(&stepper, &greedy_config(model))?;
        total += reward.score(ex, &model.detokenize(&it.src, &h.tokens))?;
    }
    Ok(total / items.len() as f64)
}

/// A reward with its mixing weight and its run length in the alternation.
pub struct RewardMix<'a> {
    pub reward: Reward<'a>,
    pub gamma: f64,
    pub run: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RlReport {
    pub initial_dev_reward: f64,
    pub best_dev_reward: f64,
    /// `None` when no epoch beat the starting checkpoint.
    pub best_epoch: Option<usize>,
    pub epochs_run: usize,
    pub reward_kinds: Vec<String>,
    pub history: Vec<LogRecord>,
}

/// Policy-gradient fine-tuning with one or more rewards alternating in runs
/// (`n` batches of the first, `m` of the second, ...). Selection uses the
/// mean over rewards of the dev greedy reward; the starting checkpoint is a
/// candidate too.
pub fn train_rl(
    model: &mut QgModel,
    train: &[TokenizedExample],
    dev: &[TokenizedExample],
    rewards: &[RewardMix<'_>],
    cfg: &TrainConfig,
    log: &mut dyn FnMut(&LogRecord),
) -> Result<RlReport> {
    cfg.validate()?;
    if train.is_empty() {
        bail!(InvalidArgument, "RL training needs examples");
    }
    let cycle: Vec<_> = rewards.iter().map(|r| (r.reward.kind(), r.run)).collect();
    if cycle.iter().map(|c| c.1).sum::<usize>() == 0 {
        bail!(InvalidArgument, "every reward has run length 0");
    }
    let items = prepare_items(model, train)?;
    let dev_items = prepare_items(model, dev)?;
    let dev_reward = |m: &QgModel| -> Result<f64> {
        let active: Vec<&RewardMix> = rewards.iter().filter(|r| r.run > 0).collect();
        let mut t = 0.0;
        for r in &active {
            t += mean_greedy_reward(m, &dev_items, dev, &r.reward)?;
        }
        Ok(t / active.len() as f64)
    };
    let mut rng = RngState::new(cfg.seed);
    let plan = BatchPlan::new(
        items.len(),
        cfg.batch_size,
        cfg.max_epochs,
        &cycle,
        &mut rng,
    )?;
    let adam = AdamConfig {
        lr: cfg.lr_rl,
        max_grad_norm: cfg.max_grad_norm,
        ..Default::default()
    };
    let mut opt = OptimState::new(&model.params, adam);
    let initial = dev_reward(model)?;
    let mut best = (model.params.clone(), initial, None);
    let mut history = Vec::new();
    let mut since = 0;
    let mut step = 0;
    let mut epochs_run = 0;
    for epoch in 0..cfg.max_epochs {
        let mut loss_total = 0.0;
        let mut reward_total = 0.0;
        let mut n = 0;
        for s in plan.epoch(epoch) {
            let kind = cycle_kind(&cycle, step)?;
            let Some(mix) = rewards.iter().find(|r| r.reward.kind() == kind) else {
                bail!(InvalidArgument, "no reward of kind {}", kind.as_str());
            };
            let mut grads = Gradients::zeros_like(&model.params);
            let scale = 1.0 / s.examples.len() as f64;
            for &i in &s.examples {
                let o = rl_step(
                    model,
                    &items[i],
                    &train[i],
                    &mix.reward,
                    mix.gamma,
                    cfg.rl_mean_log_prob,
                    &mut rng,
                    &mut grads,
                    scale,
                )?;
                loss_total += o.loss;
                reward_total += o.sample_reward;
                n += 1;
            }
            adam_step(&mut model.params, &grads, &mut opt)?;
            step += 1;
        }
        epochs_run = epoch + 1;
        let dr = dev_reward(model)?;
        let rec = LogRecord {
            phase: "rl".into(),
            epoch,
            step,
            train_loss: loss_total / n as f64,
            dev_loss: None,
            train_accuracy: None,
            dev_reward: Some(dr),
            mean_sample_reward: Some(reward_total / n as f64),
        };
        log(&rec);
        history.push(rec);
        if dr > best.1 {
            best = (model.params.clone(), dr, Some(epoch));
            since = 0;
        } else {
            since += 1;
            if since >= cfg.patience {
                break;
            }
        }
    }
    model.params = best.0;
    Ok(RlReport {
        initial_dev_reward: initial,
        best_dev_reward: best.1,
        best_epoch: best.2,
        epochs_run,
        reward_kinds: rewards
            .iter()
            .map(|r| r.reward.kind().as_str().into())
            .collect(),
        history,
    })
}

/// The default two-reward schedule: QPP then QAP in runs of `n:m`.
pub fn multi_reward_train(
    model: &mut QgModel,
    train: &[TokenizedExample],
    dev: &[TokenizedExample],
    qpp: Reward<'_>,
    qap: Reward<'_>,
    cfg: &TrainConfig,
    log: &mut dyn FnMut(&LogRecord),
) -> Result<RlReport> {
    let (n, m) = cfg.alt_rate;
    if n + m == 0 {
        bail!(InvalidArgument, "alternation rate 0:0");
    }
    let mixes = [
        RewardMix {
            reward: qpp,
            gamma: cfg.gamma_qpp,
            run: n,
        },
        RewardMix {
            reward: qap,
            gamma: cfg.gamma_qap,
            run: m,
        },
    ];
    train_rl(model, train, dev, &mixes, cfg, log)
}
