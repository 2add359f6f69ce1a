use alloc::format;
use alloc::vec::Vec;

use super::{Graph, ParamId, ParameterSet, RngState, Var};
use crate::error::Result;

/// One LSTM cell: gates `[i; f; g; o] = W [x; h] + b`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LstmCell {
    pub w: ParamId,
    pub b: ParamId,
    pub input: usize,
    pub hidden: usize,
}

impl LstmCell {
    /// Registers `{name}.w` and `{name}.b`; the forget-gate bias starts at 1.
    pub fn register(
        params: &mut ParameterSet,
        name: &str,
        input: usize,
        hidden: usize,
        rng: &mut RngState,
    ) -> Result<Self> {
        let w = params.add_init(
            &format!("{name}.w"),
            &[4 * hidden, input + hidden],
            true,
            rng,
        )?;
        let bound = 1.0 / libm::sqrt((input + hidden) as f64);
        let b = params.add_uniform(&format!("{name}.b"), &[4 * hidden], bound, true, rng)?;
        for v in &mut params.get_mut(b).data_mut()[hidden..2 * hidden] {
            *v = 1.0;
        }
        Ok(Self {
            w,
            b,
            input,
            hidden,
        })
    }

    /// Returns `(h, c)`.
    pub fn step(&self, g: &mut Graph, xs: &[Var], h: Var, c: Var) -> Result<(Var, Var)> {
        let mut inputs: Vec<Var> = xs.to_vec();
        inputs.push(h);
        let gates = g.affine(self.w, Some(self.b), &inputs)?;
        let hc = g.lstm(gates, c)?;
        let h2 = g.slice(hc, 0, self.hidden)?;
        let c2 = g.slice(hc, self.hidden, self.hidden)?;
        Ok((h2, c2))
    }

    /// Runs over a sequence from zero state; outputs are in input order.
    pub fn run(&self, g: &mut Graph, xs: &[Var], reverse: bool) -> Result<Vec<Var>> {
        let mut h = g.zeros(self.hidden);
        let mut c = g.zeros(self.hidden);
        let mut out = alloc::vec![h; xs.len()];
        let order: Vec<usize> = if reverse {
            (0..xs.len()).rev().collect()
        } else {
            (0..xs.len()).collect()
        };
        for i in order {
            let (h2, c2) = self.step(g, &[xs[i]], h, c)?;
            h = h2;
            c = c2;
            out[i] = h;
        }
        Ok(out)
    }
}

/// Stacked bidirectional LSTM; each layer's output is `[fwd_i; bwd_i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct BiLstm {
    pub layers: Vec<(LstmCell, LstmCell)>,
    pub dropout: f64,
}

/// Per-position outputs plus the final forward and backward states of the
/// top layer.
pub struct BiLstmOutput {
    pub outputs: Vec<Var>,
    pub last_forward: Var,
    pub first_backward: Var,
}

impl BiLstm {
    pub fn register(
        params: &mut ParameterSet,
        name: &str,
        input: usize,
        hidden: usize,
        layers: usize,
        dropout: f64,
        rng: &mut RngState,
    ) -> Result<Self> {
        let mut cells = Vec::new();
        let mut width = input;
        for l in 0..layers {
            let f = LstmCell::register(params, &format!("{name}.l{l}.fwd"), width, hidden, rng)?;
            let b = LstmCell::register(params, &format!("{name}.l{l}.bwd"), width, hidden, rng)?;
            cells.push((f, b));
            width = 2 * hidden;
        }
        Ok(Self {
            layers: cells,
            dropout,
        })
    }

    pub fn hidden(&self) -> usize {
        self.layers[0].0.hidden
    }

    pub fn output_size(&self) -> usize {
        2 * self.hidden()
    }

    /// Dropout is applied to the input of every layer while training.
    pub fn run(&self, g: &mut Graph, xs: &[Var], rng: &mut RngState) -> Result<BiLstmOutput> {
        if xs.is_empty() || self.layers.is_empty() {
            crate::error::bail!(
                Shape,
                "bidirectional LSTM needs at least one token and layer"
            );
        }
        let mut seq: Vec<Var> = xs.to_vec();
        let mut last_forward = xs[0];
        let mut first_backward = xs[0];
        for (fwd, bwd) in &self.layers {
            let mut inp = Vec::with_capacity(seq.len());
            for &x in &seq {
                inp.push(g.dropout(x, self.dropout, rng)?);
            }
            let f = fwd.run(g, &inp, false)?;
            let b = bwd.run(g, &inp, true)?;
            last_forward = f[f.len() - 1];
            first_backward = b[0];
            seq = f.iter().zip(&b).map(|(&a, &c)| g.concat(&[a, c])).collect();
        }
        Ok(BiLstmOutput {
            outputs: seq,
            last_forward,
            first_backward,
        })
    }
}
