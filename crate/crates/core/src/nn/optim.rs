use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use super::{Gradients, Graph, ParameterSet, RngState, Var};
use crate::error::{bail, Result};

/// Learning rate used for teacher-forcing training.
pub const TEACHER_FORCING_LR: f64 = 0.001;
/// Learning rate used for reinforcement-learning fine-tuning.
pub const RL_LR: f64 = 0.00001;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Rescale the whole gradient to this global norm when exceeded.
    pub max_grad_norm: Option<f64>,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: TEACHER_FORCING_LR,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            max_grad_norm: None,
        }
    }
}

/// Per-parameter first/second moments plus the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimState {
    pub config: AdamConfig,
    pub step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl OptimState {
    pub fn new(params: &ParameterSet, config: AdamConfig) -> Self {
        let zeros: Vec<Vec<f64>> = params
            .entries()
            .iter()
            .map(|e| vec![0.0; e.tensor.len()])
            .collect();
        Self {
            config,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn first_moment(&self, i: usize) -> &[f64] {
        &self.m[i]
    }

    pub fn second_moment(&self, i: usize) -> &[f64] {
        &self.v[i]
    }
}

/// One bias-corrected Adam update. Frozen parameters are never touched.
pub fn adam_step(
    params: &mut ParameterSet,
    grads: &Gradients,
    state: &mut OptimState,
) -> Result<()> {
    if let Some(id) = grads.first_non_finite() {
        bail!(NonFinite, "gradient of parameter {}", params.name(id));
    }
    let cfg = state.config;
    let clip = match cfg.max_grad_norm {
        Some(max) => {
            let n = grads.norm();
            if n > max && n > 0.0 {
                max / n
            } else {
                1.0
            }
        }
        None => 1.0,
    };
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - libm::pow(cfg.beta1, t as f64);
    let bc2 = 1.0 - libm::pow(cfg.beta2, t as f64);
    for id in params.ids().collect::<Vec<_>>() {
        if !params.is_trainable(id) || !grads.tracks(id) {
            continue;
        }
        let i = id.index();
        let g = grads.get(id);
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        let p = params.get_mut(id).data_mut();
        for k in 0..p.len() {
            let gk = g[k] * clip;
            m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * gk;
            v[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * gk * gk;
            let mh = m[k] / bc1;
            let vh = v[k] / bc2;
            p[k] -= cfg.lr * mh / (libm::sqrt(vh) + cfg.eps);
        }
    }
    Ok(())
}

/// Mean loss over `items` and the gradient of that mean. Each item gets its
/// own graph; `loss` must return a scalar.
pub fn batch_gradients<T, F>(
    params: &ParameterSet,
    items: &[T],
    training: bool,
    rng: &mut RngState,
    mut loss: F,
) -> Result<(f64, Gradients)>
where
    F: FnMut(&mut Graph, &T, &mut RngState) -> Result<Var>,
{
    let mut grads = Gradients::zeros_like(params);
    if items.is_empty() {
        return Ok((0.0, grads));
    }
    let scale = 1.0 / items.len() as f64;
    let mut total = 0.0;
    for item in items {
        let mut g = Graph::new(params, training);
        let l = loss(&mut g, item, rng)?;
        let v = g.scalar(l);
        if !v.is_finite() {
            bail!(NonFinite, "training loss is {}", v);
        }
        total += v;
        g.backward_scaled(l, scale, &mut grads)?;
    }
    Ok((total * scale, grads))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Tensor;

    fn scalar_param(v: f64) -> ParameterSet {
        let mut p = ParameterSet::new();
        p.add("x", Tensor::from_vec(vec![v]), true).unwrap();
        p
    }

    #[test]
    fn zero_learning_rate_leaves_params() {
        let mut p = scalar_param(1.5);
        let mut st = OptimState::new(
            &p,
            AdamConfig {
                lr: 0.0,
                ..Default::default()
            },
        );
        let mut g = Gradients::zeros_like(&p);
        g.get_mut(crate::nn::ParamId(0))[0] = 3.0;
        adam_step(&mut p, &g, &mut st).unwrap();
        assert_eq!(p.entries()[0].tensor.data()[0], 1.5);
        assert_eq!(st.step, 1);
    }

    #[test]
    fn defaults_are_training_rates() {
        assert_eq!(AdamConfig::default().lr, 0.001);
        assert_eq!(RL_LR, 0.00001);
    }

    #[test]
    fn hand_stepped_trajectory() {
        // independent transcription of the bias-corrected update
        let grads_seq = [0.5, -1.0, 2.0, 0.25];
        let (lr, b1, b2, eps) = (0.1, 0.9, 0.999, 1e-8);
        let mut x = 1.0f64;
        let (mut m, mut v) = (0.0f64, 0.0f64);
        let mut expected = Vec::new();
        for (t, g) in grads_seq.iter().enumerate() {
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let mh = m / (1.0 - b1.powi(t as i32 + 1));
            let vh = v / (1.0 - b2.powi(t as i32 + 1));
            x -= lr * mh / (vh.sqrt() + eps);
            expected.push(x);
        }
        let mut p = scalar_param(1.0);
        let mut st = OptimState::new(
            &p,
            AdamConfig {
                lr,
                ..Default::default()
            },
        );
        for (g, want) in grads_seq.iter().zip(expected) {
            let mut gr = Gradients::zeros_like(&p);
            gr.get_mut(crate::nn::ParamId(0))[0] = *g;
            adam_step(&mut p, &gr, &mut st).unwrap();
            let got = p.entries()[0].tensor.data()[0];
            assert!((got - want).abs() < 1e-12, "{got} vs {want}");
        }
    }

    #[test]
    fn nan_gradient_names_parameter() {
        let mut p = scalar_param(0.0);
        let mut st = OptimState::new(&p, AdamConfig::default());
        let mut g = Gradients::zeros_like(&p);
        g.get_mut(crate::nn::ParamId(0))[0] = f64::NAN;
        let err = adam_step(&mut p, &g, &mut st).unwrap_err();
        assert!(alloc::format!("{err}").contains('x'));
    }

    #[test]
    fn frozen_parameter_untouched() {
        let mut p = ParameterSet::new();
        p.add("frozen", Tensor::from_vec(vec![2.0]), false).unwrap();
        let mut st = OptimState::new(&p, AdamConfig::default());
        let g = Gradients::zeros_like(&p);
        adam_step(&mut p, &g, &mut st).unwrap();
        assert_eq!(p.entries()[0].tensor.data()[0], 2.0);
    }
}
