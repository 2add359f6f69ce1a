//! Central finite-difference gradient checking.

use alloc::string::{String, ToString};
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use super::{Gradients, Graph, ParamId, ParameterSet, Var};
use crate::error::{bail, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GradCheckOptions {
    pub step: f64,
    pub tolerance: f64,
    /// Gradients smaller than this are compared on an absolute scale.
    pub floor: f64,
    /// Check at most this many evenly strided entries per parameter.
    pub max_entries: Option<usize>,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            step: 1e-5,
            tolerance: 1e-4,
            floor: 1e-6,
            max_entries: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamCheck {
    pub name: String,
    pub checked: usize,
    pub max_rel_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub tolerance: f64,
    pub loss: f64,
    pub params: Vec<ParamCheck>,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.params
            .iter()
            .map(|p| p.max_rel_error)
            .fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.params
            .iter()
            .all(|p| p.max_rel_error <= self.tolerance)
    }
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(floor);
    (analytic - numeric).abs() / denom
}

fn eval_loss<F>(params: &ParameterSet, build: &F) -> Result<f64>
where
    F: Fn(&mut Graph) -> Result<Var>,
{
    let mut g = Graph::new(params, false);
    let loss = build(&mut g)?;
    let v = g.scalar(loss);
    if !v.is_finite() {
        bail!(NonFinite, "loss during gradient check");
    }
    Ok(v)
}

/// Loss value and backpropagated gradients of a scalar-valued block.
pub fn analytic_gradients<F>(params: &ParameterSet, build: &F) -> Result<(f64, Gradients)>
where
    F: Fn(&mut Graph) -> Result<Var>,
{
    let mut g = Graph::new(params, false);
    let loss = build(&mut g)?;
    let v = g.scalar(loss);
    if !v.is_finite() {
        bail!(NonFinite, "loss during gradient check");
    }
    let mut grads = Gradients::zeros_like(params);
    g.backward(loss, &mut grads)?;
    Ok((v, grads))
}

/// Central difference of the loss with respect to one parameter entry.
pub fn numeric_partial<F>(
    params: &mut ParameterSet,
    build: &F,
    id: ParamId,
    entry: usize,
    step: f64,
) -> Result<f64>
where
    F: Fn(&mut Graph) -> Result<Var>,
{
    let orig = params.get(id).data()[entry];
    params.get_mut(id).data_mut()[entry] = orig + step;
    let plus = eval_loss(params, build);
    params.get_mut(id).data_mut()[entry] = orig - step;
    let minus = eval_loss(params, build);
    params.get_mut(id).data_mut()[entry] = orig;
    Ok((plus? - minus?) / (2.0 * step))
}

/// Compare supplied analytic gradients against central differences.
pub fn compare<F>(
    params: &mut ParameterSet,
    build: &F,
    analytic: &Gradients,
    loss: f64,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph) -> Result<Var>,
{
    let mut out = Vec::new();
    for id in params.ids().collect::<Vec<_>>() {
        if !params.is_trainable(id) {
            continue;
        }
        let n = params.get(id).len();
        let stride = match opts.max_entries {
            Some(m) if m > 0 && n > m => n.div_ceil(m),
            _ => 1,
        };
        let mut worst = 0.0f64;
        let mut checked = 0;
        let mut k = 0;
        while k < n {
            let num = numeric_partial(params, build, id, k, opts.step)?;
            let err = relative_error(analytic.get(id)[k], num, opts.floor);
            worst = worst.max(err);
            checked += 1;
            k += stride;
        }
        out.push(ParamCheck {
            name: params.name(id).to_string(),
            checked,
            max_rel_error: worst,
        });
    }
    Ok(GradCheckReport {
        tolerance: opts.tolerance,
        loss,
        params: out,
    })
}

/// Per-parameter maximum relative error between backpropagated and
/// central-difference gradients of the scalar produced by `build`.
pub fn grad_check<F>(
    params: &mut ParameterSet,
    build: F,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph) -> Result<Var>,
{
    let (loss, grads) = analytic_gradients(params, &build)?;
    compare(params, &build, &grads, loss, opts)
}
