//! Curvature scales: Hessian spectral norm, local Lipschitz constants and the
//! curvature floor `μ`.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::linalg::{FnOperator, LinearOperator};
use crate::model::{Objective, ParamVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MuMethod {
    /// `μ = λ`; valid when the undamped Hessian is PSD.
    #[default]
    DampingFloor,
    SmallestEigenvalue,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SpectralConfig {
    pub power_iters: usize,
    pub rel_tol: f64,
    pub alpha_l: f64,
    pub seed: u64,
    /// Re-run power iteration every `refresh_every` TR steps; `0` never refreshes.
    pub refresh_every: usize,
    pub mu_method: MuMethod,
}

impl Default for SpectralConfig {
    fn default() -> Self {
        Self { power_iters: 20, rel_tol: 1e-3, alpha_l: 1.05, seed: 0, refresh_every: 5, mu_method: MuMethod::DampingFloor }
    }
}

impl SpectralConfig {
    pub fn validate(&self) -> Result<()> {
        if self.power_iters == 0 {
            return Err(invalid("power_iters must be at least 1"));
        }
        if !(self.alpha_l >= 1.0) || !self.alpha_l.is_finite() {
            return Err(invalid("alpha_l must be >= 1"));
        }
        if !(self.rel_tol >= 0.0) {
            return Err(invalid("rel_tol must be nonnegative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LipschitzSource {
    PowerIteration,
    Recursion,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LipschitzEstimate {
    pub value: f64,
    pub source: LipschitzSource,
    pub iterations: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvatureFloor {
    pub mu: f64,
    pub method: MuMethod,
}

/// Power iteration on a symmetric operator. Returns `(|λ|_max estimate, iterations)`.
///
/// The estimate is `||A v||` for the current unit iterate `v`, which approaches
/// the largest absolute eigenvalue from below.
fn power_iteration(op: &dyn LinearOperator, cfg: &SpectralConfig) -> Result<(f64, usize)> {
    let d = op.dim();
    if d == 0 {
        return Err(invalid("operator dimension must be positive"));
    }
    let mut v = ParamVector::random_unit(d, cfg.seed);
    let mut est = 0.0;
    for it in 1..=cfg.power_iters {
        let u = op.apply_checked(&v)?;
        let norm = u.norm();
        if norm == 0.0 {
            return Ok((0.0, it));
        }
        let converged = it > 1 && (norm - est).abs() <= cfg.rel_tol * norm;
        est = norm;
        if converged {
            return Ok((est, it));
        }
        v = u.scaled(1.0 / norm);
    }
    Ok((est, cfg.power_iters))
}

/// Largest absolute eigenvalue of a symmetric operator.
pub fn spectral_norm(op: &dyn LinearOperator, cfg: &SpectralConfig) -> Result<f64> {
    cfg.validate()?;
    Ok(power_iteration(op, cfg)?.0)
}

/// `L_t = ||∇²f(w_t)||` by power iteration on the damped Hessian at `w`.
pub fn estimate_local_lipschitz(obj: &Objective, w: &[f64], cfg: &SpectralConfig) -> Result<LipschitzEstimate> {
    cfg.validate()?;
    let h = obj.hessian_at(w);
    let (value, iterations) = power_iteration(&h, cfg)?;
    if !(value > 0.0) || !value.is_finite() {
        return Err(Error::Numeric(format!("Lipschitz estimate {value} is not positive")));
    }
    Ok(LipschitzEstimate { value, source: LipschitzSource::PowerIteration, iterations })
}

/// `L_t = α_L · L_{t-1}`.
pub fn update_lipschitz(prev: &LipschitzEstimate, cfg: &SpectralConfig) -> LipschitzEstimate {
    LipschitzEstimate { value: cfg.alpha_l * prev.value, source: LipschitzSource::Recursion, iterations: 0 }
}

/// Curvature floor `μ` of the damped operator `op` (which already includes `λ`).
///
/// The eigenvalue path runs power iteration on `σI − op` with `σ = ||op||` and
/// returns `max(σ − top, 1e-3·λ)`.
pub fn estimate_mu(op: &dyn LinearOperator, lambda: f64, method: MuMethod, cfg: &SpectralConfig) -> Result<CurvatureFloor> {
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(invalid("certified paths need damping λ > 0"));
    }
    let mu = match method {
        MuMethod::DampingFloor => lambda,
        MuMethod::SmallestEigenvalue => smallest_eigenvalue(op, cfg)?.max(1e-3 * lambda),
    };
    Ok(CurvatureFloor { mu, method })
}

/// Smallest eigenvalue estimate of a symmetric operator via a shifted power iteration.
pub fn smallest_eigenvalue(op: &dyn LinearOperator, cfg: &SpectralConfig) -> Result<f64> {
    cfg.validate()?;
    let (sigma, _) = power_iteration(op, cfg)?;
    let shifted = FnOperator::new(op.dim(), |v: &[f64]| {
        let mut out = op.apply(v);
        out.scale(-1.0);
        out.axpy(sigma, v);
        out
    });
    let (top, _) = power_iteration(&shifted, cfg)?;
    Ok(sigma - top)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::DenseOperator;

    fn tight() -> SpectralConfig {
        SpectralConfig { power_iters: 2000, rel_tol: 1e-14, ..SpectralConfig::default() }
    }

    #[test]
    fn identity_has_unit_norm() {
        let op = DenseOperator::diagonal(&[1.0; 5]);
        assert!((spectral_norm(&op, &SpectralConfig::default()).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn diagonal_spectrum() {
        let op = DenseOperator::diagonal(&[1.0, 2.0, 3.0]);
        assert!((spectral_norm(&op, &tight()).unwrap() - 3.0).abs() < 1e-6);
    }

    #[test]
    fn recursion_arithmetic() {
        let cfg = SpectralConfig::default();
        let l = LipschitzEstimate { value: 2.0, source: LipschitzSource::PowerIteration, iterations: 3 };
        let next = update_lipschitz(&l, &cfg);
        assert!((next.value - 2.1).abs() < 1e-15);
        assert_eq!(next.source, LipschitzSource::Recursion);
        let same = update_lipschitz(&l, &SpectralConfig { alpha_l: 1.0, ..cfg.clone() });
        assert_eq!(same.value, 2.0);
        let mut chained = l;
        for _ in 0..7 {
            chained = update_lipschitz(&chained, &cfg);
        }
        assert!((chained.value - 2.0 * 1.05f64.powi(7)).abs() < 1e-12);
    }

    #[test]
    fn smallest_eigenvalue_of_known_diagonal() {
        let op = DenseOperator::diagonal(&[0.5, 2.0]);
        let floor = estimate_mu(&op, 0.1, MuMethod::SmallestEigenvalue, &tight()).unwrap();
        assert!((floor.mu - 0.5).abs() < 1e-6, "{floor:?}");
    }

    #[test]
    fn damping_floor_returns_lambda() {
        let op = DenseOperator::diagonal(&[0.5, 2.0]);
        assert_eq!(estimate_mu(&op, 0.1, MuMethod::DampingFloor, &tight()).unwrap().mu, 0.1);
        assert!(estimate_mu(&op, 0.0, MuMethod::DampingFloor, &tight()).is_err());
    }

    #[test]
    fn non_finite_oracle_is_reported() {
        let op = FnOperator::new(3, |_: &[f64]| ParamVector::new(vec![f64::NAN; 3]));
        assert!(matches!(spectral_norm(&op, &SpectralConfig::default()), Err(Error::Numeric(_))));
    }
}
