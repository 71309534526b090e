//! Dense 64-bit tensor helpers and a small reverse-mode tape.
//!
//! Everything here is single-threaded with a fixed summation order, so two
//! evaluations of the same expression on the same inputs are bitwise equal.

mod params;
mod tape;

pub use params::ParamSet;
pub use tape::{backward, Gradients, ParamVars, Tape, Var};

use crate::error::{Error, Result};

/// Norm floor below which a vector is treated as degenerate.
pub const NORM_EPS: f64 = 1e-12;

/// Row-major dense tensor of rank 0, 1 or 2 (rank is not otherwise limited).
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::ShapeMismatch {
                op: "tensor",
                left: shape,
                right: vec![data.len()],
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("tensor data".into()));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            data: vec![0.0; n],
        }
    }

    pub fn scalar(value: f64) -> Result<Self> {
        Self::new(vec![], vec![value])
    }

    pub fn vector(data: Vec<f64>) -> Result<Self> {
        Self::new(vec![data.len()], data)
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Mutable access to the raw values. Callers are responsible for keeping
    /// them finite.
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Matrix view used by the tape: scalars are 1x1, vectors are 1xn.
    pub fn rows_cols(&self) -> (usize, usize) {
        match self.shape.as_slice() {
            [] => (1, 1),
            [n] => (1, *n),
            [r, c] => (*r, *c),
            other => (other[..other.len() - 1].iter().product(), other[other.len() - 1]),
        }
    }

    pub fn l2_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// `y = W x + b` for a single input vector.
pub fn linear(x: &[f64], w: &Tensor, b: &Tensor) -> Result<Vec<f64>> {
    let (out_dim, in_dim) = check_linear(w, b)?;
    if x.len() != in_dim {
        return Err(Error::ShapeMismatch {
            op: "linear",
            left: w.shape().to_vec(),
            right: vec![x.len()],
        });
    }
    Ok(linear_rows(x, 1, in_dim, w.data(), out_dim, b.data()))
}

pub(crate) fn check_linear(w: &Tensor, b: &Tensor) -> Result<(usize, usize)> {
    let (out_dim, in_dim) = match w.shape() {
        [o, i] => (*o, *i),
        _ => {
            return Err(Error::ShapeMismatch {
                op: "linear weight",
                left: w.shape().to_vec(),
                right: vec![],
            })
        }
    };
    if b.len() != out_dim {
        return Err(Error::ShapeMismatch {
            op: "linear bias",
            left: w.shape().to_vec(),
            right: b.shape().to_vec(),
        });
    }
    Ok((out_dim, in_dim))
}

/// Batched affine map over `n` row-major inputs of width `in_dim`.
///
/// Each output is `(((w0*x0 + w1*x1) + ...) + b)`, accumulated left to right.
pub(crate) fn linear_rows(
    x: &[f64],
    n: usize,
    in_dim: usize,
    w: &[f64],
    out_dim: usize,
    b: &[f64],
) -> Vec<f64> {
    let mut y = Vec::with_capacity(n * out_dim);
    for i in 0..n {
        let xi = &x[i * in_dim..(i + 1) * in_dim];
        for o in 0..out_dim {
            let wo = &w[o * in_dim..(o + 1) * in_dim];
            let mut acc = 0.0;
            for k in 0..in_dim {
                acc += wo[k] * xi[k];
            }
            y.push(acc + b[o]);
        }
    }
    y
}

pub fn relu(x: &[f64]) -> Vec<f64> {
    x.iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

pub fn norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

/// Scales `v` to unit L2 norm; fails when `‖v‖ <= NORM_EPS`.
pub fn l2_normalize(v: &[f64]) -> Result<Vec<f64>> {
    let n = norm(v);
    if !n.is_finite() {
        return Err(Error::NonFinite("l2_normalize input".into()));
    }
    if n <= NORM_EPS {
        return Err(Error::Degenerate { norm: n });
    }
    Ok(v.iter().map(|x| x / n).collect())
}

/// Numerically stable `ln Σ exp(x_i)`. Returns `-inf` for an empty slice.
pub fn log_sum_exp(x: &[f64]) -> f64 {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    let mut acc = 0.0;
    for &v in x {
        acc += (v - max).exp();
    }
    max + acc.ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: Vec<usize>, data: Vec<f64>) -> Tensor {
        Tensor::new(shape, data).unwrap()
    }

    #[test]
    fn linear_identity_and_zero_weights() {
        let eye = t(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]);
        let zero_b = t(vec![2], vec![0.0, 0.0]);
        assert_eq!(linear(&[3.0, 4.0], &eye, &zero_b).unwrap(), vec![3.0, 4.0]);

        let zero_w = Tensor::zeros(vec![2, 3]);
        let b = t(vec![2], vec![1.0, 2.0]);
        assert_eq!(linear(&[7.0, -1.0, 9.0], &zero_w, &b).unwrap(), vec![1.0, 2.0]);
    }

    #[test]
    fn linear_hand_arithmetic() {
        let w = t(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]);
        let b = Tensor::zeros(vec![2]);
        assert_eq!(linear(&[1.0, 1.0], &w, &b).unwrap(), vec![3.0, 7.0]);
    }

    #[test]
    fn linear_shape_error_names_both_shapes() {
        let w = Tensor::zeros(vec![2, 3]);
        let b = Tensor::zeros(vec![2]);
        let err = linear(&[1.0, 2.0], &w, &b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]") && msg.contains("[2]"), "{msg}");
        let bad_b = Tensor::zeros(vec![3]);
        assert!(matches!(
            linear(&[1.0, 2.0, 3.0], &w, &bad_b),
            Err(Error::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn relu_cases() {
        assert_eq!(relu(&[-1.0, 0.0, 2.0]), vec![0.0, 0.0, 2.0]);
        assert_eq!(relu(&[-1.0, -5.0]), vec![0.0, 0.0]);
        assert_eq!(relu(&[1.5, 2.5]), vec![1.5, 2.5]);
    }

    #[test]
    fn normalize_cases() {
        assert_eq!(l2_normalize(&[3.0, 4.0]).unwrap(), vec![0.6, 0.8]);
        assert_eq!(l2_normalize(&[0.0, 1.0]).unwrap(), vec![0.0, 1.0]);
        assert!(matches!(l2_normalize(&[0.0, 0.0]), Err(Error::Degenerate { .. })));
    }

    #[test]
    fn tensor_rejects_non_finite_and_bad_length() {
        assert!(Tensor::vector(vec![1.0, f64::NAN]).is_err());
        assert!(Tensor::new(vec![2, 2], vec![1.0]).is_err());
    }

    #[test]
    fn log_sum_exp_is_stable() {
        let v = log_sum_exp(&[1000.0, 1000.0]);
        assert!((v - (1000.0 + 2f64.ln())).abs() < 1e-12);
        assert_eq!(log_sum_exp(&[]), f64::NEG_INFINITY);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn vecf(n: usize) -> impl Strategy<Value = Vec<f64>> {
            proptest::collection::vec(-10.0f64..10.0, n)
        }

        proptest! {
            #[test]
            fn linear_is_affine(
                w in vecf(12), b in vecf(3), x in vecf(4), y in vecf(4),
                alpha in -3.0f64..3.0, beta in -3.0f64..3.0,
            ) {
                let w = Tensor::matrix(3, 4, w).unwrap();
                let b = Tensor::vector(b).unwrap();
                let mix: Vec<f64> = x.iter().zip(&y).map(|(p, q)| alpha * p + beta * q).collect();
                let lhs = linear(&mix, &w, &b).unwrap();
                let lx = linear(&x, &w, &b).unwrap();
                let ly = linear(&y, &w, &b).unwrap();
                for o in 0..3 {
                    let rhs = alpha * lx[o] + beta * ly[o] - (alpha + beta - 1.0) * b.data()[o];
                    let wo = &w.data()[o * 4..(o + 1) * 4];
                    let magnitude: f64 = (0..4)
                        .map(|k| wo[k].abs() * (x[k].abs() + y[k].abs()) * (1.0 + alpha.abs() + beta.abs()))
                        .sum::<f64>()
                        + 3.0 * b.data()[o].abs() * (1.0 + alpha.abs() + beta.abs());
                    prop_assert!((lhs[o] - rhs).abs() <= 1e-12 * (1.0 + magnitude),
                        "{} vs {}", lhs[o], rhs);
                }
            }

            #[test]
            fn normalize_is_scale_invariant(v in vecf(6), c in 0.01f64..100.0) {
                prop_assume!(norm(&v) > 1e-3);
                let scaled: Vec<f64> = v.iter().map(|x| x * c).collect();
                let a = l2_normalize(&v).unwrap();
                let b = l2_normalize(&scaled).unwrap();
                for (p, q) in a.iter().zip(&b) {
                    prop_assert!((p - q).abs() <= 1e-12);
                }
                prop_assert!((norm(&a) - 1.0).abs() <= 1e-12);
            }
        }
    }
}
