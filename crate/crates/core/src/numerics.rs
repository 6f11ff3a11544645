//! Dense linear algebra over `f64`, the activations used by the recurrent
//! cells, and a central-difference gradient oracle.
//!
//! Everything here works on single vectors; there is no batching. The
//! `*_acc` kernels accumulate into their output, which is how gradients are
//! summed across decoding steps.

use std::ops::{Deref, DerefMut};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::XorShift64Star;

/// A dense column vector.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Vector(pub Vec<f64>);

impl Vector {
    pub fn zeros(dim: usize) -> Self {
        Vector(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl Deref for Vector {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for Vector {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

impl From<Vec<f64>> for Vector {
    fn from(v: Vec<f64>) -> Self {
        Vector(v)
    }
}

/// Row-major dense matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape(
                format!("{rows}x{cols} matrix"),
                format!("{} values", data.len()),
            ));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(Error::shape(format!("row of {cols}"), format!("row of {}", r.len())));
            }
            data.extend_from_slice(r);
        }
        Ok(Matrix {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
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

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn fill(&mut self, v: f64) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    fn shape_str(&self) -> String {
        format!("{}x{}", self.rows, self.cols)
    }

    /// `out += W x`.
    #[inline]
    pub fn gemv_acc(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.cols);
        debug_assert_eq!(out.len(), self.rows);
        for (o, row) in out.iter_mut().zip(self.data.chunks_exact(self.cols)) {
            *o += dot(row, x);
        }
    }

    /// `out += Wᵀ y`.
    #[inline]
    pub fn gemv_t_acc(&self, y: &[f64], out: &mut [f64]) {
        debug_assert_eq!(y.len(), self.rows);
        debug_assert_eq!(out.len(), self.cols);
        for (&yi, row) in y.iter().zip(self.data.chunks_exact(self.cols)) {
            if yi != 0.0 {
                axpy(yi, row, out);
            }
        }
    }

    /// `self += y xᵀ`.
    #[inline]
    pub fn outer_acc(&mut self, y: &[f64], x: &[f64]) {
        debug_assert_eq!(y.len(), self.rows);
        debug_assert_eq!(x.len(), self.cols);
        let cols = self.cols;
        for (&yi, row) in y.iter().zip(self.data.chunks_exact_mut(cols)) {
            if yi != 0.0 {
                axpy(yi, x, row);
            }
        }
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `y += alpha x`.
#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Matrix-vector product `W x`.
pub fn affine(w: &Matrix, x: &[f64]) -> Result<Vector> {
    if w.cols != x.len() {
        return Err(Error::shape(w.shape_str(), format!("vector of dim {}", x.len())));
    }
    let mut out = Vector::zeros(w.rows);
    w.gemv_acc(x, &mut out);
    Ok(out)
}

const SIGMOID_CEIL: f64 = 1.0 - f64::EPSILON / 2.0;

/// Logistic function, clamped so the result is strictly inside (0, 1) even
/// where the exact value rounds to an endpoint.
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    let y = if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    };
    y.clamp(f64::MIN_POSITIVE, SIGMOID_CEIL)
}

pub fn sigmoid_vec(x: &[f64]) -> Vector {
    x.iter().map(|&v| sigmoid(v)).collect::<Vec<_>>().into()
}

pub fn tanh_vec(x: &[f64]) -> Vector {
    x.iter().map(|v| v.tanh()).collect::<Vec<_>>().into()
}

/// Max-shifted softmax. Panics on an empty input.
pub fn softmax(x: &[f64]) -> Vector {
    assert!(!x.is_empty(), "softmax of an empty vector");
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = x.iter().map(|&v| (v - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    out.iter_mut().for_each(|v| *v /= sum);
    out.into()
}

/// Log-softmax with the same shift as [`softmax`].
pub fn log_softmax(x: &[f64]) -> Vector {
    assert!(!x.is_empty(), "log_softmax of an empty vector");
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = x.iter().map(|&v| (v - max).exp()).sum::<f64>().ln() + max;
    x.iter().map(|&v| v - lse).collect::<Vec<_>>().into()
}

/// A trainable matrix with its gradient accumulator. Vectors are stored as
/// single-column matrices.
#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub value: Matrix,
    pub grad: Matrix,
}

impl Param {
    pub fn new(value: Matrix) -> Self {
        let grad = Matrix::zeros(value.rows, value.cols);
        Param { value, grad }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Param::new(Matrix::zeros(rows, cols))
    }

    /// Entries drawn uniformly from `[-scale, scale]`.
    pub fn uniform(rows: usize, cols: usize, scale: f64, rng: &mut XorShift64Star) -> Self {
        let data = (0..rows * cols).map(|_| rng.uniform(-scale, scale)).collect();
        Param::new(Matrix { rows, cols, data })
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }
}

/// Anything that owns an ordered list of parameters.
pub trait ParamSet {
    fn params(&self) -> Vec<&Param>;
    fn params_mut(&mut self) -> Vec<&mut Param>;

    fn zero_grads(&mut self) {
        self.params_mut().into_iter().for_each(Param::zero_grad);
    }

    fn num_entries(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    fn grad_norm(&self) -> f64 {
        self.params()
            .iter()
            .flat_map(|p| p.grad.data().iter())
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    }
}

impl ParamSet for Vec<Param> {
    fn params(&self) -> Vec<&Param> {
        self.iter().collect()
    }
    fn params_mut(&mut self) -> Vec<&mut Param> {
        self.iter_mut().collect()
    }
}

/// One parameter entry compared by [`grad_check_entries`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradEntry {
    pub param: usize,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

impl GradEntry {
    /// `|a - n| / max(|a|, |n|, 1e-8)`.
    pub fn relative_error(&self) -> f64 {
        (self.analytic - self.numeric).abs() / self.analytic.abs().max(self.numeric.abs()).max(1e-8)
    }

    pub fn absolute_error(&self) -> f64 {
        (self.analytic - self.numeric).abs()
    }
}

/// Central differences `(f(θ+eps) - f(θ-eps)) / 2eps` for every entry of
/// `params`, paired with the gradient already accumulated there. Values are
/// restored afterwards.
pub fn grad_check_entries<P, F>(params: &mut P, mut f: F, eps: f64) -> Result<Vec<GradEntry>>
where
    P: ParamSet + ?Sized,
    F: FnMut(&P) -> f64,
{
    if !(eps > 0.0) {
        return Err(Error::Oracle(format!("eps must be positive, got {eps}")));
    }
    let analytic: Vec<Vec<f64>> = params
        .params()
        .iter()
        .map(|p| p.grad.data().to_vec())
        .collect();
    let mut out = Vec::with_capacity(analytic.iter().map(Vec::len).sum());
    for (b, grads) in analytic.iter().enumerate() {
        for (e, &a) in grads.iter().enumerate() {
            let orig = params.params()[b].value.data()[e];
            params.params_mut()[b].value.data_mut()[e] = orig + eps;
            let plus = f(params);
            params.params_mut()[b].value.data_mut()[e] = orig - eps;
            let minus = f(params);
            params.params_mut()[b].value.data_mut()[e] = orig;
            if !plus.is_finite() || !minus.is_finite() {
                return Err(Error::Oracle(format!(
                    "non-finite evaluation at parameter {b}, entry {e}"
                )));
            }
            out.push(GradEntry {
                param: b,
                index: e,
                analytic: a,
                numeric: (plus - minus) / (2.0 * eps),
            });
        }
    }
    Ok(out)
}

/// Largest [`GradEntry::relative_error`] over every parameter entry.
pub fn grad_check<P, F>(params: &mut P, f: F, eps: f64) -> Result<f64>
where
    P: ParamSet + ?Sized,
    F: FnMut(&P) -> f64,
{
    Ok(grad_check_entries(params, f, eps)?
        .iter()
        .map(GradEntry::relative_error)
        .fold(0.0, f64::max))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn affine_examples() {
        let x = [1.0, 2.0, 3.0];
        assert_eq!(affine(&Matrix::identity(3), &x).unwrap().0, vec![1.0, 2.0, 3.0]);
        assert_eq!(affine(&Matrix::zeros(2, 3), &x).unwrap().0, vec![0.0, 0.0]);
        let w = Matrix::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]).unwrap();
        assert_eq!(affine(&w, &[1.0, 1.0]).unwrap().0, vec![3.0, 7.0]);
    }

    #[test]
    fn affine_shape_error_names_both_shapes() {
        let err = affine(&Matrix::zeros(2, 3), &[1.0, 2.0]).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("2x3") && msg.contains("dim 2"), "{msg}");
    }

    #[test]
    fn sigmoid_examples() {
        assert_eq!(sigmoid_vec(&[0.0, 0.0]).0, vec![0.5, 0.5]);
        assert!((sigmoid(3f64.ln()) - 0.75).abs() < 1e-15);
        for x in [-1e6, -800.0, -40.0, 40.0, 800.0, 1e6] {
            let s = sigmoid(x);
            assert!(s > 0.0 && s < 1.0, "sigmoid({x}) = {s}");
        }
    }

    #[test]
    fn tanh_examples() {
        assert_eq!(tanh_vec(&[0.0]).0, vec![0.0]);
        assert!((tanh_vec(&[100.0])[0] - 1.0).abs() < 1e-12);
        let a = tanh_vec(&[0.3, -1.7]);
        let b = tanh_vec(&[-0.3, 1.7]);
        assert_eq!(a[0], -b[0]);
        assert_eq!(a[1], -b[1]);
    }

    #[test]
    fn softmax_examples() {
        let u = softmax(&[0.0, 0.0, 0.0]);
        for p in u.iter() {
            assert!((p - 1.0 / 3.0).abs() < 1e-15);
        }
        let c = 4.2;
        let p = softmax(&[c, c + 2f64.ln()]);
        assert!((p[0] - 1.0 / 3.0).abs() < 1e-12);
        assert!((p[1] - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(softmax(&[1000.0, 1000.0]).0, vec![0.5, 0.5]);
    }

    #[test]
    fn grad_check_quadratic_and_constant() {
        let mut theta = vec![Param::new(Matrix::from_vec(1, 1, vec![3.0]).unwrap())];
        theta[0].grad.set(0, 0, 6.0);
        let err = grad_check(&mut theta, |p| p[0].value.get(0, 0).powi(2), 1e-5).unwrap();
        assert!(err <= 1e-8, "{err}");

        let mut flat = vec![Param::zeros(2, 2)];
        let err = grad_check(&mut flat, |_| 7.0, 1e-5).unwrap();
        assert_eq!(err, 0.0);
    }

    #[test]
    fn grad_check_rejects_non_finite() {
        let mut theta = vec![Param::zeros(1, 1)];
        assert!(matches!(
            grad_check(&mut theta, |_| f64::NAN, 1e-5),
            Err(Error::Oracle(_))
        ));
        assert!(grad_check(&mut theta, |_| 0.0, 0.0).is_err());
    }

    proptest! {
        #[test]
        fn softmax_sums_to_one(x in proptest::collection::vec(-1e6f64..1e6, 1..20)) {
            let p = softmax(&x);
            let s: f64 = p.iter().sum();
            prop_assert!((s - 1.0).abs() <= 1e-12);
            prop_assert!(p.iter().all(|&v| v >= 0.0));
        }

        #[test]
        fn softmax_shift_invariant(x in proptest::collection::vec(-50f64..50.0, 1..10), c in -100f64..100.0) {
            let a = softmax(&x);
            let shifted: Vec<f64> = x.iter().map(|v| v + c).collect();
            let b = softmax(&shifted);
            for (p, q) in a.iter().zip(b.iter()) {
                prop_assert!((p - q).abs() < 1e-12);
            }
        }

        #[test]
        fn sigmoid_symmetry(x in proptest::collection::vec(-700f64..700.0, 1..10)) {
            let neg: Vec<f64> = x.iter().map(|v| -v).collect();
            let a = sigmoid_vec(&x);
            let b = sigmoid_vec(&neg);
            for (p, q) in a.iter().zip(b.iter()) {
                prop_assert!((p + q - 1.0).abs() <= 1e-12);
            }
        }

        #[test]
        fn affine_is_linear(
            w in proptest::collection::vec(-10f64..10.0, 12),
            x in proptest::collection::vec(-10f64..10.0, 4),
            y in proptest::collection::vec(-10f64..10.0, 4),
            a in -5f64..5.0,
            b in -5f64..5.0,
        ) {
            let w = Matrix::from_vec(3, 4, w).unwrap();
            let mix: Vec<f64> = x.iter().zip(&y).map(|(p, q)| a * p + b * q).collect();
            let lhs = affine(&w, &mix).unwrap();
            let fx = affine(&w, &x).unwrap();
            let fy = affine(&w, &y).unwrap();
            for i in 0..3 {
                prop_assert!((lhs[i] - (a * fx[i] + b * fy[i])).abs() <= 1e-10);
            }
        }
    }
}
