//! Matrix-free linear operators and conjugate-gradient solves.

use crate::error::{invalid, Error, Result};
use crate::model::ParamVector;

/// A symmetric linear map `v -> A v` on `R^d`.
pub trait LinearOperator {
    fn dim(&self) -> usize;
    fn apply(&self, v: &[f64]) -> ParamVector;

    /// `apply` that rejects non-finite output.
    fn apply_checked(&self, v: &[f64]) -> Result<ParamVector> {
        let out = self.apply(v);
        if out.is_finite() {
            Ok(out)
        } else {
            Err(Error::Numeric("operator returned a non-finite vector".into()))
        }
    }
}

impl<T: LinearOperator + ?Sized> LinearOperator for &T {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn apply(&self, v: &[f64]) -> ParamVector {
        (**self).apply(v)
    }
}

/// Wraps a closure as an operator.
pub struct FnOperator<F> {
    dim: usize,
    f: F,
}

impl<F: Fn(&[f64]) -> ParamVector> FnOperator<F> {
    pub fn new(dim: usize, f: F) -> Self {
        Self { dim, f }
    }
}

impl<F: Fn(&[f64]) -> ParamVector> LinearOperator for FnOperator<F> {
    fn dim(&self) -> usize {
        self.dim
    }
    fn apply(&self, v: &[f64]) -> ParamVector {
        (self.f)(v)
    }
}

/// Dense symmetric matrix, row-major. Used by tests and small problems.
#[derive(Debug, Clone)]
pub struct DenseOperator {
    n: usize,
    data: Vec<f64>,
}

impl DenseOperator {
    pub fn new(n: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), n * n, "dense operator must be square");
        Self { n, data }
    }

    pub fn diagonal(diag: &[f64]) -> Self {
        let n = diag.len();
        let mut data = vec![0.0; n * n];
        for (i, d) in diag.iter().enumerate() {
            data[i * n + i] = *d;
        }
        Self { n, data }
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }
}

impl LinearOperator for DenseOperator {
    fn dim(&self) -> usize {
        self.n
    }
    fn apply(&self, v: &[f64]) -> ParamVector {
        ParamVector::new(self.data.chunks_exact(self.n).map(|row| crate::model::params::dot(row, v)).collect())
    }
}

/// `A + shift * I`
pub struct Shifted<A> {
    pub inner: A,
    pub shift: f64,
}

impl<A: LinearOperator> LinearOperator for Shifted<A> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }
    fn apply(&self, v: &[f64]) -> ParamVector {
        let mut out = self.inner.apply(v);
        out.axpy(self.shift, v);
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct CgConfig {
    /// Stop when `||r|| <= rel_tol * ||b||`.
    pub rel_tol: f64,
    pub max_iters: usize,
}

impl Default for CgConfig {
    fn default() -> Self {
        Self { rel_tol: 1e-8, max_iters: 500 }
    }
}

#[derive(Debug, Clone)]
pub struct CgSolution {
    pub x: ParamVector,
    pub iterations: usize,
    pub relative_residual: f64,
}

/// Solves `A x = b` for symmetric positive definite `A`.
///
/// Fails with [`Error::SingularHessian`] on nonpositive curvature or when the
/// residual target is not met within the iteration budget.
pub fn conjugate_gradient(op: &dyn LinearOperator, b: &[f64], cfg: &CgConfig) -> Result<CgSolution> {
    if b.len() != op.dim() {
        return Err(invalid("right-hand side length does not match operator"));
    }
    let b_norm = crate::model::params::dot(b, b).sqrt();
    let mut x = ParamVector::zeros(b.len());
    if b_norm == 0.0 {
        return Ok(CgSolution { x, iterations: 0, relative_residual: 0.0 });
    }
    let mut r = ParamVector::new(b.to_vec());
    let mut p = r.clone();
    let mut rr = r.norm_sq();
    let target = cfg.rel_tol * b_norm;
    for it in 0..cfg.max_iters {
        let ap = op.apply_checked(&p)?;
        let curv = p.dot(&ap);
        if !(curv > 0.0) {
            return Err(Error::SingularHessian(format!("nonpositive curvature {curv:.3e} at CG iteration {it}")));
        }
        let alpha = rr / curv;
        x.axpy(alpha, &p);
        r.axpy(-alpha, &ap);
        let rr_next = r.norm_sq();
        if rr_next.sqrt() <= target {
            return Ok(CgSolution { x, iterations: it + 1, relative_residual: rr_next.sqrt() / b_norm });
        }
        let beta = rr_next / rr;
        rr = rr_next;
        for (pi, ri) in p.iter_mut().zip(r.iter()) {
            *pi = ri + beta * *pi;
        }
    }
    Err(Error::SingularHessian(format!(
        "CG did not reach relative residual {:.1e} in {} iterations (at {:.3e})",
        cfg.rel_tol,
        cfg.max_iters,
        rr.sqrt() / b_norm
    )))
}
