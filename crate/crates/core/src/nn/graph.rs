//! Reverse-mode differentiation over a linear tape of vector operations.
//!
//! Every node owns a contiguous slice of one value arena. Parameters are not
//! copied onto the tape: affine maps and embedding lookups read the
//! [`ParameterSet`] directly and scatter their gradients into [`Gradients`].

use alloc::vec;
use alloc::vec::Vec;

use super::{Gradients, ParamId, ParameterSet, RngState};
use crate::error::{bail, Result};

/// Handle to a node on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(u32);

impl Var {
    fn idx(self) -> usize {
        self.0 as usize
    }
}

#[derive(Debug, Clone, Copy)]
struct Span {
    start: u32,
    len: u32,
}

#[derive(Debug, Clone, Copy)]
enum Op {
    Leaf,
    Param(ParamId),
    Row(ParamId, u32),
    Affine {
        w: ParamId,
        b: Option<ParamId>,
        xs: Span,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Tanh(Var),
    Sigmoid(Var),
    Log(Var),
    Abs(Var),
    Concat(Span),
    Slice(Var, u32),
    Softmax(Var),
    LogSoftmax(Var),
    Lstm {
        gates: Var,
        c_prev: Var,
    },
    Maxout(Var),
    MaxPool(Span),
    Dot(Var, Var),
    Scores {
        keys: Span,
        query: Var,
    },
    WeightedSum {
        values: Span,
        weights: Var,
    },
    Interp {
        gate: Var,
        a: Var,
        b: Var,
    },
    CopyMix {
        vocab: Var,
        attn: Var,
        gate: Var,
        targets: Span,
    },
    Pick(Var, u32),
    Sum(Span),
}

#[derive(Debug, Clone, Copy)]
struct Node {
    off: usize,
    len: usize,
    op: Op,
    req: bool,
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0f64; 4];
    let chunks = n / 4;
    for i in 0..chunks {
        let k = i * 4;
        acc[0] += a[k] * b[k];
        acc[1] += a[k + 1] * b[k + 1];
        acc[2] += a[k + 2] * b[k + 2];
        acc[3] += a[k + 3] * b[k + 3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for k in chunks * 4..n {
        s += a[k] * b[k];
    }
    s
}

#[inline]
fn axpy(y: &mut [f64], alpha: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub(crate) fn softmax_in_place(x: &mut [f64]) {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in x.iter_mut() {
        *v = libm::exp(*v - max);
        sum += *v;
    }
    for v in x.iter_mut() {
        *v /= sum;
    }
}

/// A differentiable computation recorded against a borrowed parameter set.
pub struct Graph<'p> {
    params: &'p ParameterSet,
    training: bool,
    vals: Vec<f64>,
    nodes: Vec<Node>,
    lists: Vec<u32>,
}

impl<'p> Graph<'p> {
    pub fn new(params: &'p ParameterSet, training: bool) -> Self {
        Self {
            params,
            training,
            vals: Vec::with_capacity(1 << 14),
            nodes: Vec::with_capacity(1 << 10),
            lists: Vec::new(),
        }
    }

    pub fn params(&self) -> &'p ParameterSet {
        self.params
    }

    pub fn is_training(&self) -> bool {
        self.training
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn value(&self, v: Var) -> &[f64] {
        let n = &self.nodes[v.idx()];
        &self.vals[n.off..n.off + n.len]
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v)[0]
    }

    pub fn len(&self, v: Var) -> usize {
        self.nodes[v.idx()].len
    }

    fn req(&self, v: Var) -> bool {
        self.nodes[v.idx()].req
    }

    fn span(&mut self, vars: &[Var]) -> Span {
        let start = self.lists.len() as u32;
        self.lists.extend(vars.iter().map(|v| v.0));
        Span {
            start,
            len: vars.len() as u32,
        }
    }

    fn span_raw(&mut self, items: impl IntoIterator<Item = u32>) -> Span {
        let start = self.lists.len() as u32;
        self.lists.extend(items);
        Span {
            start,
            len: self.lists.len() as u32 - start,
        }
    }

    fn list(&self, s: Span) -> &[u32] {
        &self.lists[s.start as usize..(s.start + s.len) as usize]
    }

    /// Reserve an output slot and fill it with `f(inputs_arena, out)`.
    fn push_with(
        &mut self,
        len: usize,
        op: Op,
        req: bool,
        f: impl FnOnce(&[Node], &[f64], &mut [f64]),
    ) -> Var {
        let off = self.vals.len();
        self.vals.resize(off + len, 0.0);
        let (inp, out) = self.vals.split_at_mut(off);
        f(&self.nodes, inp, out);
        self.nodes.push(Node { off, len, op, req });
        Var(self.nodes.len() as u32 - 1)
    }

    // ---- leaves -------------------------------------------------------

    pub fn input(&mut self, values: &[f64]) -> Var {
        self.push_with(values.len(), Op::Leaf, false, |_, _, out| {
            out.copy_from_slice(values)
        })
    }

    pub fn zeros(&mut self, len: usize) -> Var {
        self.push_with(len, Op::Leaf, false, |_, _, _| {})
    }

    /// Whole parameter tensor, flattened.
    pub fn param(&mut self, id: ParamId) -> Var {
        let t = self.params.get(id);
        let req = self.params.is_trainable(id);
        self.push_with(t.len(), Op::Param(id), req, |_, _, out| {
            out.copy_from_slice(t.data())
        })
    }

    /// Row `r` of a matrix parameter (embedding lookup).
    pub fn row(&mut self, id: ParamId, r: usize) -> Var {
        let t = self.params.get(id);
        let req = self.params.is_trainable(id);
        let row = t.row(r);
        self.push_with(row.len(), Op::Row(id, r as u32), req, |_, _, out| {
            out.copy_from_slice(row)
        })
    }

    // ---- linear maps --------------------------------------------------

    /// `W [x_1; ...; x_k] + b` without materializing the concatenation.
    pub fn affine(&mut self, w: ParamId, b: Option<ParamId>, xs: &[Var]) -> Result<Var> {
        let wt = self.params.get(w);
        if wt.shape().len() != 2 {
            bail!(
                Shape,
                "affine weight {} is not a matrix",
                self.params.name(w)
            );
        }
        let (rows, cols) = (wt.shape()[0], wt.shape()[1]);
        let in_len: usize = xs.iter().map(|&x| self.len(x)).sum();
        if in_len != cols {
            bail!(
                Shape,
                "affine {} expects input {}, got {}",
                self.params.name(w),
                cols,
                in_len
            );
        }
        if let Some(b) = b {
            if self.params.get(b).len() != rows {
                bail!(Shape, "bias {} length mismatch", self.params.name(b));
            }
        }
        let req = self.params.is_trainable(w)
            || b.is_some_and(|b| self.params.is_trainable(b))
            || xs.iter().any(|&x| self.req(x));
        let span = self.span(xs);
        let params = self.params;
        let lists = &self.lists[span.start as usize..(span.start + span.len) as usize];
        let lists: Vec<u32> = lists.to_vec();
        Ok(self.push_with(
            rows,
            Op::Affine { w, b, xs: span },
            req,
            |nodes, inp, out| {
                let wd = params.get(w).data();
                match b {
                    Some(b) => out.copy_from_slice(params.get(b).data()),
                    None => out.iter_mut().for_each(|v| *v = 0.0),
                }
                let mut col = 0;
                for &xi in &lists {
                    let n = &nodes[xi as usize];
                    let x = &inp[n.off..n.off + n.len];
                    for (o, acc) in out.iter_mut().enumerate() {
                        let base = o * cols + col;
                        *acc += dot(&wd[base..base + n.len], x);
                    }
                    col += n.len;
                }
            },
        ))
    }

    // ---- element-wise -------------------------------------------------

    fn check_same(&self, a: Var, b: Var, what: &str) -> Result<usize> {
        let (la, lb) = (self.len(a), self.len(b));
        if la != lb {
            bail!(Shape, "{what}: lengths {la} and {lb} differ");
        }
        Ok(la)
    }

    fn binary(&mut self, a: Var, b: Var, op: Op, f: fn(f64, f64) -> f64) -> Result<Var> {
        let len = self.check_same(a, b, "element-wise op")?;
        let req = self.req(a) || self.req(b);
        let (na, nb) = (self.nodes[a.idx()], self.nodes[b.idx()]);
        Ok(self.push_with(len, op, req, |_, inp, out| {
            for i in 0..len {
                out[i] = f(inp[na.off + i], inp[nb.off + i]);
            }
        }))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Mul(a, b), |x, y| x * y)
    }

    fn unary(&mut self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let na = self.nodes[a.idx()];
        self.push_with(na.len, op, na.req, |_, inp, out| {
            for (o, &x) in out.iter_mut().zip(&inp[na.off..na.off + na.len]) {
                *o = f(x);
            }
        })
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        self.unary(a, Op::Scale(a, s), |x| s * x)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, Op::Tanh(a), libm::tanh)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, Op::Sigmoid(a), sigmoid)
    }

    pub fn log(&mut self, a: Var) -> Var {
        self.unary(a, Op::Log(a), libm::log)
    }

    pub fn abs(&mut self, a: Var) -> Var {
        self.unary(a, Op::Abs(a), libm::fabs)
    }

    /// `gate * a + (1 - gate) * b`, element-wise.
    pub fn interp(&mut self, gate: Var, a: Var, b: Var) -> Result<Var> {
        let len = self.check_same(gate, a, "interp")?;
        self.check_same(a, b, "interp")?;
        let (ng, na, nb) = (
            self.nodes[gate.idx()],
            self.nodes[a.idx()],
            self.nodes[b.idx()],
        );
        let req = ng.req || na.req || nb.req;
        Ok(
            self.push_with(len, Op::Interp { gate, a, b }, req, |_, inp, out| {
                for i in 0..len {
                    let g = inp[ng.off + i];
                    out[i] = g * inp[na.off + i] + (1.0 - g) * inp[nb.off + i];
                }
            }),
        )
    }

    /// Inverted dropout. Identity outside training or when `rate == 0`.
    pub fn dropout(&mut self, x: Var, rate: f64, rng: &mut RngState) -> Result<Var> {
        if !self.training || rate <= 0.0 {
            return Ok(x);
        }
        let keep = 1.0 - rate;
        let mask: Vec<f64> = (0..self.len(x))
            .map(|_| if rng.bernoulli(keep) { 1.0 / keep } else { 0.0 })
            .collect();
        let m = self.input(&mask);
        self.mul(x, m)
    }

    // ---- shape ops ----------------------------------------------------

    pub fn concat(&mut self, xs: &[Var]) -> Var {
        let len = xs.iter().map(|&x| self.len(x)).sum();
        let req = xs.iter().any(|&x| self.req(x));
        let span = self.span(xs);
        let parts: Vec<Node> = xs.iter().map(|x| self.nodes[x.idx()]).collect();
        self.push_with(len, Op::Concat(span), req, |_, inp, out| {
            let mut o = 0;
            for n in &parts {
                out[o..o + n.len].copy_from_slice(&inp[n.off..n.off + n.len]);
                o += n.len;
            }
        })
    }

    pub fn slice(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let na = self.nodes[a.idx()];
        if start + len > na.len {
            bail!(
                Shape,
                "slice {}..{} out of range {}",
                start,
                start + len,
                na.len
            );
        }
        Ok(
            self.push_with(len, Op::Slice(a, start as u32), na.req, |_, inp, out| {
                out.copy_from_slice(&inp[na.off + start..na.off + start + len])
            }),
        )
    }

    // ---- normalizers --------------------------------------------------

    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let na = self.nodes[a.idx()];
        if na.len == 0 {
            bail!(Shape, "softmax over an empty vector");
        }
        Ok(
            self.push_with(na.len, Op::Softmax(a), na.req, |_, inp, out| {
                out.copy_from_slice(&inp[na.off..na.off + na.len]);
                softmax_in_place(out);
            }),
        )
    }

    pub fn log_softmax(&mut self, a: Var) -> Result<Var> {
        let na = self.nodes[a.idx()];
        if na.len == 0 {
            bail!(Shape, "log-softmax over an empty vector");
        }
        Ok(
            self.push_with(na.len, Op::LogSoftmax(a), na.req, |_, inp, out| {
                let x = &inp[na.off..na.off + na.len];
                let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let lse = max + libm::log(x.iter().map(|v| libm::exp(v - max)).sum::<f64>());
                for (o, v) in out.iter_mut().zip(x) {
                    *o = v - lse;
                }
            }),
        )
    }

    // ---- recurrent and pooling ----------------------------------------

    /// Fused LSTM cell. `gates` holds pre-activations `[i; f; g; o]` (4H);
    /// the result is `[h; c]` (2H).
    pub fn lstm(&mut self, gates: Var, c_prev: Var) -> Result<Var> {
        let (ng, nc) = (self.nodes[gates.idx()], self.nodes[c_prev.idx()]);
        let h = nc.len;
        if ng.len != 4 * h {
            bail!(Shape, "lstm gates {} vs cell {}", ng.len, h);
        }
        Ok(self.push_with(
            2 * h,
            Op::Lstm { gates, c_prev },
            ng.req || nc.req,
            |_, inp, out| {
                let z = &inp[ng.off..ng.off + 4 * h];
                let cp = &inp[nc.off..nc.off + h];
                for k in 0..h {
                    let i = sigmoid(z[k]);
                    let f = sigmoid(z[h + k]);
                    let g = libm::tanh(z[2 * h + k]);
                    let o = sigmoid(z[3 * h + k]);
                    let c = f * cp[k] + i * g;
                    out[h + k] = c;
                    out[k] = o * libm::tanh(c);
                }
            },
        ))
    }

    /// Pairwise max over adjacent entries; halves the length.
    pub fn maxout(&mut self, a: Var) -> Result<Var> {
        let na = self.nodes[a.idx()];
        if !na.len.is_multiple_of(2) {
            bail!(Shape, "maxout needs an even length, got {}", na.len);
        }
        Ok(
            self.push_with(na.len / 2, Op::Maxout(a), na.req, |_, inp, out| {
                let x = &inp[na.off..na.off + na.len];
                for (k, o) in out.iter_mut().enumerate() {
                    *o = x[2 * k].max(x[2 * k + 1]);
                }
            }),
        )
    }

    /// Element-wise max over a sequence of equal-length vectors.
    pub fn max_pool(&mut self, xs: &[Var]) -> Result<Var> {
        if xs.is_empty() {
            bail!(Shape, "max-pool over an empty sequence");
        }
        let len = self.len(xs[0]);
        if xs.iter().any(|&x| self.len(x) != len) {
            bail!(Shape, "max-pool inputs differ in length");
        }
        let req = xs.iter().any(|&x| self.req(x));
        let span = self.span(xs);
        let parts: Vec<usize> = xs.iter().map(|x| self.nodes[x.idx()].off).collect();
        Ok(self.push_with(len, Op::MaxPool(span), req, |_, inp, out| {
            out.copy_from_slice(&inp[parts[0]..parts[0] + len]);
            for &off in &parts[1..] {
                for j in 0..len {
                    out[j] = out[j].max(inp[off + j]);
                }
            }
        }))
    }

    // ---- attention ----------------------------------------------------

    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same(a, b, "dot")?;
        let (na, nb) = (self.nodes[a.idx()], self.nodes[b.idx()]);
        Ok(
            self.push_with(1, Op::Dot(a, b), na.req || nb.req, |_, inp, out| {
                out[0] = dot(&inp[na.off..na.off + na.len], &inp[nb.off..nb.off + nb.len]);
            }),
        )
    }

    /// `[k_1 . q, ..., k_M . q]`.
    pub fn scores(&mut self, keys: &[Var], query: Var) -> Result<Var> {
        let nq = self.nodes[query.idx()];
        if keys.is_empty() || keys.iter().any(|&k| self.len(k) != nq.len) {
            bail!(
                Shape,
                "attention keys must be non-empty and match the query length"
            );
        }
        let req = nq.req || keys.iter().any(|&k| self.req(k));
        let span = self.span(keys);
        let offs: Vec<usize> = keys.iter().map(|k| self.nodes[k.idx()].off).collect();
        Ok(self.push_with(
            keys.len(),
            Op::Scores { keys: span, query },
            req,
            |_, inp, out| {
                let q = &inp[nq.off..nq.off + nq.len];
                for (o, &off) in out.iter_mut().zip(&offs) {
                    *o = dot(&inp[off..off + nq.len], q);
                }
            },
        ))
    }

    /// `sum_k w_k v_k`.
    pub fn weighted_sum(&mut self, values: &[Var], weights: Var) -> Result<Var> {
        let nw = self.nodes[weights.idx()];
        if values.len() != nw.len || values.is_empty() {
            bail!(
                Shape,
                "weighted sum: {} values vs {} weights",
                values.len(),
                nw.len
            );
        }
        let len = self.len(values[0]);
        if values.iter().any(|&v| self.len(v) != len) {
            bail!(Shape, "weighted sum values differ in length");
        }
        let req = nw.req || values.iter().any(|&v| self.req(v));
        let span = self.span(values);
        let offs: Vec<usize> = values.iter().map(|v| self.nodes[v.idx()].off).collect();
        Ok(self.push_with(
            len,
            Op::WeightedSum {
                values: span,
                weights,
            },
            req,
            |_, inp, out| {
                for (k, &off) in offs.iter().enumerate() {
                    axpy(out, inp[nw.off + k], &inp[off..off + len]);
                }
            },
        ))
    }

    /// Gated mixture of a vocabulary distribution and attention mass scattered
    /// onto (extended) vocabulary ids: `g * vocab[v] + (1 - g) * sum_{t_i = v} attn_i`.
    pub fn copy_mix(
        &mut self,
        vocab: Var,
        attn: Var,
        gate: Var,
        targets: &[usize],
        ext_len: usize,
    ) -> Result<Var> {
        let (nv, na, ng) = (
            self.nodes[vocab.idx()],
            self.nodes[attn.idx()],
            self.nodes[gate.idx()],
        );
        if ng.len != 1 || na.len != targets.len() || nv.len > ext_len {
            bail!(Shape, "copy mixture dimensions are inconsistent");
        }
        if targets.iter().any(|&t| t >= ext_len) {
            bail!(Shape, "copy target beyond extended vocabulary");
        }
        let req = nv.req || na.req || ng.req;
        let span = self.span_raw(targets.iter().map(|&t| t as u32));
        let op = Op::CopyMix {
            vocab,
            attn,
            gate,
            targets: span,
        };
        Ok(self.push_with(ext_len, op, req, |_, inp, out| {
            let g = inp[ng.off];
            for (o, &p) in out.iter_mut().zip(&inp[nv.off..nv.off + nv.len]) {
                *o = g * p;
            }
            for (i, &t) in targets.iter().enumerate() {
                out[t] += (1.0 - g) * inp[na.off + i];
            }
        }))
    }

    // ---- reductions ---------------------------------------------------

    pub fn pick(&mut self, a: Var, i: usize) -> Result<Var> {
        let na = self.nodes[a.idx()];
        if i >= na.len {
            bail!(Shape, "pick index {} out of range {}", i, na.len);
        }
        Ok(
            self.push_with(1, Op::Pick(a, i as u32), na.req, |_, inp, out| {
                out[0] = inp[na.off + i]
            }),
        )
    }

    /// Element-wise sum of equal-length vectors.
    pub fn sum(&mut self, xs: &[Var]) -> Result<Var> {
        if xs.is_empty() {
            bail!(Shape, "sum of nothing");
        }
        let len = self.len(xs[0]);
        if xs.iter().any(|&x| self.len(x) != len) {
            bail!(Shape, "sum inputs differ in length");
        }
        let req = xs.iter().any(|&x| self.req(x));
        let span = self.span(xs);
        let offs: Vec<usize> = xs.iter().map(|x| self.nodes[x.idx()].off).collect();
        Ok(self.push_with(len, Op::Sum(span), req, |_, inp, out| {
            for &off in &offs {
                for j in 0..len {
                    out[j] += inp[off + j];
                }
            }
        }))
    }

    pub fn mean(&mut self, xs: &[Var]) -> Result<Var> {
        let s = self.sum(xs)?;
        Ok(self.scale(s, 1.0 / xs.len() as f64))
    }

    // ---- backward -----------------------------------------------------

    /// Accumulate `d loss / d param` into `grads` for every trainable parameter.
    pub fn backward(&self, loss: Var, grads: &mut Gradients) -> Result<()> {
        self.backward_scaled(loss, 1.0, grads)
    }

    /// As [`Graph::backward`] with the output seed set to `seed`.
    pub fn backward_scaled(&self, loss: Var, seed: f64, grads: &mut Gradients) -> Result<()> {
        let ln = self.nodes[loss.idx()];
        if ln.len != 1 {
            bail!(Shape, "backward needs a scalar loss, got length {}", ln.len);
        }
        if !self.vals[ln.off].is_finite() {
            bail!(NonFinite, "loss");
        }
        if seed == 0.0 || !ln.req {
            return Ok(());
        }
        let mut g = vec![0.0; ln.off + 1];
        g[ln.off] = seed;
        for idx in (0..=loss.idx()).rev() {
            let node = self.nodes[idx];
            if !node.req {
                continue;
            }
            let (gin, gout) = g.split_at_mut(node.off);
            let gy = &gout[..node.len];
            if gy.iter().all(|&v| v == 0.0) {
                continue;
            }
            self.backprop_node(node, gy, gin, grads);
        }
        Ok(())
    }

    fn vals_of(&self, v: Var) -> &[f64] {
        self.value(v)
    }

    fn grad_of<'g>(&self, gin: &'g mut [f64], v: Var) -> Option<&'g mut [f64]> {
        let n = &self.nodes[v.idx()];
        if n.req {
            Some(&mut gin[n.off..n.off + n.len])
        } else {
            None
        }
    }

    fn backprop_node(&self, node: Node, gy: &[f64], gin: &mut [f64], grads: &mut Gradients) {
        let y = &self.vals[node.off..node.off + node.len];
        match node.op {
            Op::Leaf => {}
            Op::Param(id) => {
                if grads.tracks(id) {
                    axpy(grads.get_mut(id), 1.0, gy);
                }
            }
            Op::Row(id, r) => {
                if grads.tracks(id) {
                    let r = r as usize;
                    let n = gy.len();
                    axpy(&mut grads.get_mut(id)[r * n..(r + 1) * n], 1.0, gy);
                }
            }
            Op::Affine { w, b, xs } => {
                let wt = self.params.get(w);
                let cols = wt.shape()[1];
                let wd = wt.data();
                if let Some(b) = b {
                    if grads.tracks(b) {
                        axpy(grads.get_mut(b), 1.0, gy);
                    }
                }
                let track_w = grads.tracks(w);
                let mut col = 0;
                for &xi in self.list(xs) {
                    let xv = Var(xi);
                    let xn = self.nodes[xv.idx()];
                    let x = self.vals_of(xv);
                    if track_w {
                        let gw = grads.get_mut(w);
                        for (o, &d) in gy.iter().enumerate() {
                            if d != 0.0 {
                                let base = o * cols + col;
                                axpy(&mut gw[base..base + xn.len], d, x);
                            }
                        }
                    }
                    if let Some(gx) = self.grad_of(gin, xv) {
                        for (o, &d) in gy.iter().enumerate() {
                            if d != 0.0 {
                                let base = o * cols + col;
                                axpy(gx, d, &wd[base..base + xn.len]);
                            }
                        }
                    }
                    col += xn.len;
                }
            }
            Op::Add(a, b) => {
                if let Some(ga) = self.grad_of(gin, a) {
                    axpy(ga, 1.0, gy);
                }
                if let Some(gb) = self.grad_of(gin, b) {
                    axpy(gb, 1.0, gy);
                }
            }
            Op::Sub(a, b) => {
                if let Some(ga) = self.grad_of(gin, a) {
                    axpy(ga, 1.0, gy);
                }
                if let Some(gb) = self.grad_of(gin, b) {
                    axpy(gb, -1.0, gy);
                }
            }
            Op::Mul(a, b) => {
                if let Some(ga) = self.grad_of(gin, a) {
                    for ((g, &d), &bv) in ga.iter_mut().zip(gy).zip(self.vals_of(b)) {
                        *g += d * bv;
                    }
                }
                if let Some(gb) = self.grad_of(gin, b) {
                    for ((g, &d), &av) in gb.iter_mut().zip(gy).zip(self.vals_of(a)) {
                        *g += d * av;
                    }
                }
            }
            Op::Scale(a, s) => {
                if let Some(ga) = self.grad_of(gin, a) {
                    axpy(ga, s, gy);
                }
            }
            Op::Tanh(a) => {
                if let Some(ga) = self.grad_of(gin, a) {
                    for ((g, &d), &t) in ga.iter_mut().zip(gy).zip(y) {
                        *g += d * (1.0 - t * t);
                    }
                }
            }
            Op::Sigmoid(a) => {
                if let Some(ga) = self.grad_of(gin, a) {
                    for ((g, &d), &s) in ga.iter_mut().zip(gy).zip(y) {
                        *g += d * s * (1.0 - s);
                    }
                }
            }
            Op::Log(a) => {
                if let Some(ga) = self.grad_of(gin, a) {
                    for ((g, &d), &x) in ga.iter_mut().zip(gy).zip(self.vals_of(a)) {
                        *g += d / x;
                    }
                }
            }
            Op::Abs(a) => {
                if let Some(ga) = self.grad_of(gin, a) {
                    for ((g, &d), &x) in ga.iter_mut().zip(gy).zip(self.vals_of(a)) {
                        if x > 0.0 {
                            *g += d;
                        } else if x < 0.0 {
                            *g -= d;
                        }
                    }
                }
            }
            Op::Concat(span) => {
                let mut o = 0;
                for &xi in self.list(span) {
                    let xv = Var(xi);
                    let n = self.nodes[xv.idx()].len;
                    if let Some(gx) = self.grad_of(gin, xv) {
                        axpy(gx, 1.0, &gy[o..o + n]);
                    }
                    o += n;
                }
            }
            Op::Slice(a, start) => {
                if let Some(ga) = self.grad_of(gin, a) {
                    let s = start as usize;
                    axpy(&mut ga[s..s + gy.len()], 1.0, gy);
                }
            }
            Op::Softmax(a) => {
                if let Some(ga) = self.grad_of(gin, a) {
                    let inner = dot(gy, y);
                    for ((g, &d), &p) in ga.iter_mut().zip(gy).zip(y) {
                        *g += p * (d - inner);
                    }
                }
            }
            Op::LogSoftmax(a) => {
                if let Some(ga) = self.grad_of(gin, a) {
                    let total: f64 = gy.iter().sum();
                    for ((g, &d), &lp) in ga.iter_mut().zip(gy).zip(y) {
                        *g += d - libm::exp(lp) * total;
                    }
                }
            }
            Op::Lstm { gates, c_prev } => {
                let h = node.len / 2;
                let z = self.vals_of(gates);
                let cp = self.vals_of(c_prev);
                let c = &y[h..];
                let mut dz = vec![0.0; 4 * h];
                let mut dcp = vec![0.0; h];
                for k in 0..h {
                    let i = sigmoid(z[k]);
                    let f = sigmoid(z[h + k]);
                    let gg = libm::tanh(z[2 * h + k]);
                    let o = sigmoid(z[3 * h + k]);
                    let tc = libm::tanh(c[k]);
                    let dh = gy[k];
                    let dc = gy[h + k] + dh * o * (1.0 - tc * tc);
                    dz[k] = dc * gg * i * (1.0 - i);
                    dz[h + k] = dc * cp[k] * f * (1.0 - f);
                    dz[2 * h + k] = dc * i * (1.0 - gg * gg);
                    dz[3 * h + k] = dh * tc * o * (1.0 - o);
                    dcp[k] = dc * f;
                }
                if let Some(gz) = self.grad_of(gin, gates) {
                    axpy(gz, 1.0, &dz);
                }
                if let Some(gc) = self.grad_of(gin, c_prev) {
                    axpy(gc, 1.0, &dcp);
                }
            }
            Op::Maxout(a) => {
                let x = self.vals_of(a);
                if let Some(ga) = self.grad_of(gin, a) {
                    for (k, &d) in gy.iter().enumerate() {
                        let j = if x[2 * k] >= x[2 * k + 1] {
                            2 * k
                        } else {
                            2 * k + 1
                        };
                        ga[j] += d;
                    }
                }
            }
            Op::MaxPool(span) => {
                let items: Vec<Var> = self.list(span).iter().map(|&i| Var(i)).collect();
                for (j, &d) in gy.iter().enumerate() {
                    let mut best = 0;
                    let mut best_v = self.vals_of(items[0])[j];
                    for (t, &v) in items.iter().enumerate().skip(1) {
                        let val = self.vals_of(v)[j];
                        if val > best_v {
                            best = t;
                            best_v = val;
                        }
                    }
                    if let Some(gx) = self.grad_of(gin, items[best]) {
                        gx[j] += d;
                    }
                }
            }
            Op::Dot(a, b) => {
                let d = gy[0];
                if let Some(ga) = self.grad_of(gin, a) {
                    axpy(ga, d, self.vals_of(b));
                }
                if let Some(gb) = self.grad_of(gin, b) {
                    axpy(gb, d, self.vals_of(a));
                }
            }
            Op::Scores { keys, query } => {
                let q = self.vals_of(query);
                for (k, &ki) in self.list(keys).iter().enumerate() {
                    let kv = Var(ki);
                    if gy[k] == 0.0 {
                        continue;
                    }
                    if let Some(gq) = self.grad_of(gin, query) {
                        axpy(gq, gy[k], self.vals_of(kv));
                    }
                    if let Some(gk) = self.grad_of(gin, kv) {
                        axpy(gk, gy[k], q);
                    }
                }
            }
            Op::WeightedSum { values, weights } => {
                let w = self.vals_of(weights);
                for (k, &vi) in self.list(values).iter().enumerate() {
                    let vv = Var(vi);
                    if let Some(gw) = self.grad_of(gin, weights) {
                        gw[k] += dot(self.vals_of(vv), gy);
                    }
                    if let Some(gv) = self.grad_of(gin, vv) {
                        axpy(gv, w[k], gy);
                    }
                }
            }
            Op::Interp { gate, a, b } => {
                let (gv, av, bv) = (self.vals_of(gate), self.vals_of(a), self.vals_of(b));
                if let Some(gg) = self.grad_of(gin, gate) {
                    for i in 0..gy.len() {
                        gg[i] += gy[i] * (av[i] - bv[i]);
                    }
                }
                if let Some(ga) = self.grad_of(gin, a) {
                    for i in 0..gy.len() {
                        ga[i] += gy[i] * gv[i];
                    }
                }
                if let Some(gb) = self.grad_of(gin, b) {
                    for i in 0..gy.len() {
                        gb[i] += gy[i] * (1.0 - gv[i]);
                    }
                }
            }
            Op::CopyMix {
                vocab,
                attn,
                gate,
                targets,
            } => {
                let g = self.vals_of(gate)[0];
                let pv = self.vals_of(vocab);
                let pa = self.vals_of(attn);
                let targets = self.list(targets);
                let mut dg = dot(pv, &gy[..pv.len()]);
                for (i, &t) in targets.iter().enumerate() {
                    dg -= pa[i] * gy[t as usize];
                }
                if let Some(gv) = self.grad_of(gin, vocab) {
                    axpy(gv, g, &gy[..pv.len()]);
                }
                if let Some(ga) = self.grad_of(gin, attn) {
                    for (i, &t) in targets.iter().enumerate() {
                        ga[i] += (1.0 - g) * gy[t as usize];
                    }
                }
                if let Some(gg) = self.grad_of(gin, gate) {
                    gg[0] += dg;
                }
            }
            Op::Pick(a, i) => {
                if let Some(ga) = self.grad_of(gin, a) {
                    ga[i as usize] += gy[0];
                }
            }
            Op::Sum(span) => {
                for &xi in self.list(span) {
                    if let Some(gx) = self.grad_of(gin, Var(xi)) {
                        axpy(gx, 1.0, gy);
                    }
                }
            }
        }
    }
}
