//! Tensor-level forms of the differentiable blocks, for callers that do not
//! need gradients.

use alloc::vec;
use alloc::vec::Vec;

use super::graph::{dot, sigmoid, softmax_in_place};
use super::{RngState, Tensor};
use crate::error::{bail, Result};

/// Softmax along `axis`.
pub fn softmax(x: &Tensor, axis: usize) -> Result<Tensor> {
    let shape = x.shape();
    if axis >= shape.len() {
        bail!(Shape, "axis {} out of range for shape {:?}", axis, shape);
    }
    let n = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    let outer: usize = shape[..axis].iter().product();
    let mut out = x.clone();
    let data = out.data_mut();
    let mut buf = vec![0.0; n];
    for o in 0..outer {
        for i in 0..inner {
            for k in 0..n {
                buf[k] = data[(o * n + k) * inner + i];
            }
            softmax_in_place(&mut buf);
            for k in 0..n {
                data[(o * n + k) * inner + i] = buf[k];
            }
        }
    }
    Ok(out)
}

/// `W x + b` for a matrix `W` of shape `[out, in]`.
pub fn affine(w: &Tensor, b: Option<&Tensor>, x: &[f64]) -> Result<Vec<f64>> {
    if w.shape().len() != 2 || w.shape()[1] != x.len() {
        bail!(Shape, "affine weight {:?} vs input {}", w.shape(), x.len());
    }
    let rows = w.shape()[0];
    let mut out: Vec<f64> = (0..rows).map(|r| dot(w.row(r), x)).collect();
    if let Some(b) = b {
        if b.len() != rows {
            bail!(Shape, "bias length {} vs {}", b.len(), rows);
        }
        for (o, bv) in out.iter_mut().zip(b.data()) {
            *o += bv;
        }
    }
    Ok(out)
}

/// One LSTM step with gate layout `[i; f; g; o]`, `W: [4H, in + H]`.
pub fn lstm_step(
    input: &[f64],
    h_prev: &[f64],
    c_prev: &[f64],
    w: &Tensor,
    b: &Tensor,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let h = h_prev.len();
    if c_prev.len() != h || w.shape() != [4 * h, input.len() + h] || b.len() != 4 * h {
        bail!(
            Shape,
            "lstm step: input {}, hidden {}, weight {:?}, bias {}",
            input.len(),
            h,
            w.shape(),
            b.len()
        );
    }
    let mut xh = input.to_vec();
    xh.extend_from_slice(h_prev);
    let z = affine(w, Some(b), &xh)?;
    let mut h_out = vec![0.0; h];
    let mut c_out = vec![0.0; h];
    for k in 0..h {
        let i = sigmoid(z[k]);
        let f = sigmoid(z[h + k]);
        let g = libm::tanh(z[2 * h + k]);
        let o = sigmoid(z[3 * h + k]);
        c_out[k] = f * c_prev[k] + i * g;
        h_out[k] = o * libm::tanh(c_out[k]);
    }
    Ok((h_out, c_out))
}

pub fn embedding_lookup(table: &Tensor, ids: &[usize]) -> Result<Tensor> {
    let rows = table.rows();
    let cols = table.cols();
    let mut data = Vec::with_capacity(ids.len() * cols);
    for &id in ids {
        if id >= rows {
            bail!(InvalidArgument, "embedding id {} out of range {}", id, rows);
        }
        data.extend_from_slice(table.row(id));
    }
    if ids.is_empty() {
        bail!(Shape, "embedding lookup of an empty id list");
    }
    Tensor::new(vec![ids.len(), cols], data)
}

/// Inverted dropout: kept entries are scaled by `1/(1-rate)`.
pub fn dropout(x: &Tensor, rate: f64, rng: &mut RngState) -> Tensor {
    if rate <= 0.0 {
        return x.clone();
    }
    let keep = 1.0 - rate;
    let mut out = x.clone();
    for v in out.data_mut() {
        *v = if rng.bernoulli(keep) { *v / keep } else { 0.0 };
    }
    out
}

/// Element-wise max over the time axis of a `[T, D]` tensor.
pub fn max_pool_over_time(x: &Tensor) -> Result<Vec<f64>> {
    if x.shape().len() != 2 {
        bail!(Shape, "max-pool expects [T, D], got {:?}", x.shape());
    }
    let mut out = x.row(0).to_vec();
    for t in 1..x.rows() {
        for (o, &v) in out.iter_mut().zip(x.row(t)) {
            *o = o.max(v);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_of_zeros_is_uniform() {
        let t = softmax(&Tensor::from_vec(vec![0.0, 0.0]), 0).unwrap();
        assert_eq!(t.data(), &[0.5, 0.5]);
    }

    #[test]
    fn softmax_bad_axis() {
        assert!(softmax(&Tensor::from_vec(vec![1.0]), 1).is_err());
    }

    #[test]
    fn softmax_rows_of_matrix() {
        let t = Tensor::new(vec![2, 3], vec![1., 2., 3., -1., 0., 5.]).unwrap();
        let s = softmax(&t, 1).unwrap();
        for r in 0..2 {
            assert!((s.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        let s0 = softmax(&t, 0).unwrap();
        for c in 0..3 {
            assert!((s0.data()[c] + s0.data()[3 + c] - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_parameter_lstm_fixed_point() {
        let w = Tensor::zeros(&[12, 5]);
        let b = Tensor::zeros(&[12]);
        let (h, c) = lstm_step(&[0.3, -1.0], &[0.0; 3], &[0.0; 3], &w, &b).unwrap();
        assert_eq!(h, vec![0.0; 3]);
        assert_eq!(c, vec![0.0; 3]);
    }

    #[test]
    fn lstm_dimension_mismatch() {
        let w = Tensor::zeros(&[12, 5]);
        let b = Tensor::zeros(&[12]);
        assert!(lstm_step(&[0.3], &[0.0; 3], &[0.0; 3], &w, &b).is_err());
    }

    #[test]
    fn dropout_rate_zero_identity() {
        let x = Tensor::from_vec(vec![1.0, -2.0, 3.0]);
        let mut rng = RngState::new(9);
        assert_eq!(dropout(&x, 0.0, &mut rng), x);
    }

    #[test]
    fn dropout_keep_fraction_within_three_sigma() {
        let n = 10_000;
        let rate = 0.3;
        let x = Tensor::from_vec(vec![1.0; n]);
        let mut rng = RngState::new(11);
        let y = dropout(&x, rate, &mut rng);
        let kept = y.data().iter().filter(|&&v| v != 0.0).count() as f64;
        let p = 1.0 - rate;
        let sigma = (n as f64 * p * (1.0 - p)).sqrt();
        assert!((kept - n as f64 * p).abs() <= 3.0 * sigma, "kept {kept}");
        assert!(y
            .data()
            .iter()
            .all(|&v| v == 0.0 || (v - 1.0 / p).abs() < 1e-12));
    }

    #[test]
    fn max_pool_picks_column_max() {
        let x = Tensor::new(vec![3, 2], vec![1., 5., 4., -1., 2., 2.]).unwrap();
        assert_eq!(max_pool_over_time(&x).unwrap(), vec![4.0, 5.0]);
    }

    #[test]
    fn embedding_rows() {
        let t = Tensor::new(vec![3, 2], vec![0., 1., 2., 3., 4., 5.]).unwrap();
        let e = embedding_lookup(&t, &[2, 0]).unwrap();
        assert_eq!(e.data(), &[4., 5., 0., 1.]);
        assert!(embedding_lookup(&t, &[3]).is_err());
    }
}
