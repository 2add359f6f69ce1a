use alloc::string::String;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use super::TrainConfig;
use crate::error::{bail, Result};
use crate::model::{PreparedSource, QgModel};
use crate::nn::{adam_step, batch_gradients, AdamConfig, Graph, OptimState, RngState};
use crate::text::{TokenizedExample, BOS};

/// A source paragraph with its gold target ids (ending in EOS).
#[derive(Debug, Clone, PartialEq)]
pub struct TfItem {
    pub id: String,
    pub src: PreparedSource,
    pub target: Vec<usize>,
}

pub fn prepare_items(model: &QgModel, data: &[TokenizedExample]) -> Result<Vec<TfItem>> {
    data.iter()
        .map(|ex| {
            let Some(q) = &ex.question_tokens else {
                bail!(Data, "example {} has no question", ex.id);
            };
            let src = model.prepare(ex);
            let target = model.target_ids(&src, q);
            Ok(TfItem {
                id: ex.id.clone(),
                src,
                target,
            })
        })
        .collect()
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub phase: String,
    pub epoch: usize,
    pub step: usize,
    pub train_loss: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dev_loss: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub train_accuracy: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dev_reward: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_sample_reward: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TfReport {
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub best_loss: f64,
    pub final_train_accuracy: Option<f64>,
    pub history: Vec<LogRecord>,
}

/// Mean per-token negative log-likelihood without dropout.
pub fn mean_nll(model: &QgModel, items: &[TfItem]) -> Result<f64> {
    let mut total = 0.0;
    let mut n = 0usize;
    let mut rng = RngState::new(0);
    for it in items {
        let mut g = Graph::new(&model.params, false);
        let lps = model.forward_teacher_forced(&mut g, &it.src, &it.target, &mut rng)?;
        total -= lps.iter().map(|&v| g.scalar(v)).sum::<f64>();
        n += lps.len();
    }
    Ok(if n == 0 { 0.0 } else { total / n as f64 })
}

/// Fraction of gold next tokens that are the argmax under teacher forcing,
/// without dropout.
pub fn teacher_forced_accuracy(model: &QgModel, items: &[TfItem]) -> Result<f64> {
    let mut right = 0usize;
    let mut n = 0usize;
    let mut rng = RngState::new(0);
    for it in items {
        let mut g = Graph::new(&model.params, false);
        let enc = model.encode_source(&mut g, &it.src, &mut rng)?;
        let mut state = enc.init.clone();
        let mut prev = BOS;
        for &t in &it.target {
            let (out, next) =
                model.decode_step(&mut g, &enc.hhat, &it.src, &state, prev, &mut rng)?;
            let d = g.value(out.dist);
            let mut best = 0;
            for (i, &v) in d.iter().enumerate() {
                if v > d[best] {
                    best = i;
                }
            }
            right += usize::from(best == t);
            n += 1;
            state = next;
            prev = t;
        }
    }
    Ok(if n == 0 { 0.0 } else { right as f64 / n as f64 })
}

/// Minimizes the mean `L_ML` with Adam. Early stopping watches the dev loss
/// (the training loss when `dev` is empty) and the best parameters are kept;
/// with an empty dev set the final parameters are kept instead.
pub fn train_teacher_forcing(
    model: &mut QgModel,
    train: &[TokenizedExample],
    dev: &[TokenizedExample],
    cfg: &TrainConfig,
    log: &mut dyn FnMut(&LogRecord),
) -> Result<TfReport> {
    cfg.validate()?;
    if train.is_empty() {
        bail!(InvalidArgument, "teacher forcing needs training examples");
    }
    let items = prepare_items(model, train)?;
    let dev_items = prepare_items(model, dev)?;
    let mut rng = RngState::new(cfg.seed);
    let adam = AdamConfig {
        lr: cfg.lr_tf,
        max_grad_norm: cfg.max_grad_norm,
        ..Default::default()
    };
    let mut opt = OptimState::new(&model.params, adam);
    let mut order: Vec<usize> = (0..items.len()).collect();
    let mut best = (model.params.clone(), f64::INFINITY, 0usize);
    let mut history = Vec::new();
    let mut since = 0;
    let mut step = 0;
    let mut accuracy = None;
    let mut epochs_run = 0;
    for epoch in 0..cfg.max_epochs {
        rng.shuffle(&mut order);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&TfItem> = chunk.iter().map(|&i| &items[i]).collect();
            let m: &QgModel = model;
            let (loss, grads) = batch_gradients(&m.params, &batch, true, &mut rng, |g, it, r| {
                let lps = m.forward_teacher_forced(g, &it.src, &it.target, r)?;
                m.ml_loss(g, &lps)
            })?;
            adam_step(&mut model.params, &grads, &mut opt)?;
            total += loss * batch.len() as f64;
            step += 1;
        }
        epochs_run = epoch + 1;
        let train_loss = total / items.len() as f64;
        let dev_loss = if dev_items.is_empty() {
            None
        } else {
            Some(mean_nll(model, &dev_items)?)
        };
        if cfg.target_train_accuracy.is_some() {
            accuracy = Some(teacher_forced_accuracy(model, &items)?);
        }
        let rec = LogRecord {
            phase: "teacher_forcing".into(),
            epoch,
            step,
            train_loss,
            dev_loss,
            train_accuracy: accuracy,
            dev_reward: None,
            mean_sample_reward: None,
        };
        log(&rec);
        history.push(rec);
        let watched = dev_loss.unwrap_or(train_loss);
        if watched < best.1 {
            if !dev_items.is_empty() {
                best.0 = model.params.clone();
            }
            best.1 = watched;
            best.2 = epoch;
            since = 0;
        } else {
            since += 1;
        }
        let reached = matches!((accuracy, cfg.target_train_accuracy), (Some(a), Some(t)) if a >= t);
        if reached || since >= cfg.patience {
            break;
        }
    }
    if !dev_items.is_empty() {
        model.params = best.0;
    }
    Ok(TfReport {
        epochs_run,
        best_epoch: best.2,
        best_loss: best.1,
        final_train_accuracy: accuracy,
        history,
    })
}
