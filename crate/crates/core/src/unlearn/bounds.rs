use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{term, BaselineBoundParams, BoundMethod, CertParams, ErrorBudget, SensitivityBound};
use crate::error::{invalid, Error, Result};
use crate::model::ParamVector;
use crate::trsolver::TrConfig;

/// `U_t = ||g_0|| + L_max · Σ_{s<t} Δ̄_s`.
pub fn prerun_gradient_bound(g0_norm: f64, radii: &[f64], l_max: f64) -> f64 {
    g0_norm + l_max * radii.iter().sum::<f64>()
}

/// Lower bound on the per-step predicted reduction under oracle errors:
/// `max{0, pr_est − ε_g Δ̄ − ½ ε_H Δ̄² − (ε_iHVP U² + (||H||+λ) Δ̄ ε_iHVP U)}`.
pub fn predicted_reduction_floor(
    pr_est: f64,
    radius: f64,
    u_t: f64,
    h_norm: f64,
    lambda: f64,
    budget: &ErrorBudget,
) -> f64 {
    let grad = budget.eps_g * radius;
    let hvp = 0.5 * budget.eps_h * radius * radius;
    let ihvp = budget.eps_ihvp * u_t * u_t + (h_norm + lambda) * radius * budget.eps_ihvp * u_t;
    (pr_est - grad - hvp - ihvp).max(0.0)
}

/// `Δ = sqrt(2/μ) · (1 − η₁κτμ/L_max)^{T/2} · sqrt(f0 − f_lower)`.
pub fn tr_distance_bound(
    f0: f64,
    f_hat_lower: f64,
    mu: f64,
    cfg: &TrConfig,
    l_max: f64,
    t: usize,
) -> Result<SensitivityBound> {
    if !(mu > 0.0) || !mu.is_finite() {
        return Err(Error::BoundInvalid(format!("curvature floor μ = {mu} must be positive")));
    }
    if !(f0 >= f_hat_lower) || !f0.is_finite() {
        return Err(Error::BoundInvalid(format!("f0 = {f0} is below the lower bound {f_hat_lower}")));
    }
    let contraction = if t == 0 {
        1.0
    } else {
        let rate = cfg.eta1 * cfg.kappa * cfg.tau * mu / l_max;
        let factor = 1.0 - rate;
        if !(factor > 0.0 && factor < 1.0) {
            return Err(Error::BoundInvalid(format!("contraction factor {factor} outside (0, 1)")));
        }
        factor.powf(t as f64 / 2.0)
    };
    let scale = (2.0 / mu).sqrt();
    let gap = (f0 - f_hat_lower).sqrt();
    Ok(SensitivityBound {
        delta: scale * contraction * gap,
        method: BoundMethod::TrCorollary,
        components: vec![
            term("sqrt_2_over_mu", scale),
            term("contraction", contraction),
            term("sqrt_value_gap", gap),
            term("iterations", t as f64),
            term("l_max", l_max),
        ],
    })
}

/// Baseline bound `(2C(MC+λ)+G)/(λ+λ_min) + (16 ln d/ρ_b)/(λ+λ_min) + (2LC+G)/16`.
pub fn zhang_sensitivity_bound(p: &BaselineBoundParams, lambda: f64, d: usize) -> Result<SensitivityBound> {
    p.validate()?;
    let denom = lambda + p.lambda_min;
    if !(denom > 0.0) {
        return Err(Error::BoundInvalid(format!("λ + λ_min = {denom} must be positive")));
    }
    let d = p.d.unwrap_or(d as f64);
    if !(d > 0.0) {
        return Err(invalid("model dimension must be positive"));
    }
    let newton = (2.0 * p.c * (p.m * p.c + lambda) + p.g) / denom;
    let sketch = (16.0 * d.ln() / p.rho_b) / denom;
    let drift = (2.0 * p.l * p.c + p.g) / 16.0;
    Ok(SensitivityBound {
        delta: newton + sketch + drift,
        method: BoundMethod::ZhangAppendixB,
        components: vec![term("curvature_term", newton), term("dimension_term", sketch), term("gradient_term", drift)],
    })
}

/// `σ = Δ sqrt(2 ln(1.25/δ)) / ε`.
pub fn noise_sigma(delta_bound: f64, cert: &CertParams) -> Result<f64> {
    cert.validate()?;
    if !(delta_bound >= 0.0) || !delta_bound.is_finite() {
        return Err(Error::BoundInvalid(format!("sensitivity {delta_bound} must be finite and nonnegative")));
    }
    Ok(delta_bound * (2.0 * (1.25 / cert.delta).ln()).sqrt() / cert.epsilon)
}

/// `w + Y`, `Y ~ N(0, σ² I)`, deterministic per seed.
pub fn add_noise(w: &ParamVector, sigma: f64, seed: u64) -> Result<ParamVector> {
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(invalid(format!("noise scale {sigma} must be finite and nonnegative")));
    }
    if sigma == 0.0 {
        return Ok(w.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(ParamVector::new(w.iter().map(|v| v + sigma * rng.sample::<f64, _>(StandardNormal)).collect()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn prerun_bound_examples() {
        assert_eq!(prerun_gradient_bound(1.3, &[], 5.0), 1.3);
        assert_eq!(prerun_gradient_bound(1.0, &[0.5, 0.25], 2.0), 2.5);
    }

    #[test]
    fn predicted_reduction_examples() {
        let zero = ErrorBudget::default();
        assert_eq!(predicted_reduction_floor(0.7, 0.5, 2.0, 2.0, 1.0, &zero), 0.7);
        let b = ErrorBudget { eps_g: 0.1, eps_h: 0.2, eps_ihvp: 0.05 };
        let pr = predicted_reduction_floor(1.0, 0.5, 2.0, 2.0, 1.0, &b);
        assert!((pr - 0.575).abs() < 1e-12, "{pr}");
        let huge = ErrorBudget { eps_g: 100.0, ..b };
        assert_eq!(predicted_reduction_floor(1.0, 0.5, 2.0, 2.0, 1.0, &huge), 0.0);
    }

    #[test]
    fn distance_bound_examples() {
        // the formula is evaluated as given; η₁ = 1 would be rejected by TrConfig::validate
        let cfg = TrConfig { eta1: 1.0, kappa: 1.0, tau: 1.0, ..TrConfig::default() };
        let b = tr_distance_bound(1.0, 0.0, 1.0, &cfg, 2.0, 2).unwrap();
        assert!((b.delta - 2f64.sqrt() * 0.5).abs() < 1e-12, "{}", b.delta);
        let t0 = tr_distance_bound(3.0, 1.0, 0.5, &cfg, 2.0, 0).unwrap();
        assert!((t0.delta - (2.0 * 2.0 / 0.5f64).sqrt()).abs() < 1e-12);
        assert!(matches!(
            tr_distance_bound(1.0, 0.0, 4.0, &cfg, 2.0, 1),
            Err(Error::BoundInvalid(_))
        ));
    }

    #[test]
    fn baseline_bound_example() {
        let p = BaselineBoundParams { c: 1.0, g: 1.0, l: 1.0, m: 1.0, lambda_min: 0.0, d: Some(1f64.exp()), rho_b: 16.0 };
        let b = zhang_sensitivity_bound(&p, 1.0, 0).unwrap();
        assert!((b.delta - 6.1875).abs() < 1e-12, "{}", b.delta);
        let m0 = zhang_sensitivity_bound(&BaselineBoundParams { m: 1e-300, ..p }, 1.0, 0).unwrap();
        assert!((m0.component("curvature_term").unwrap() - 3.0).abs() < 1e-12);
        let tighter = zhang_sensitivity_bound(&BaselineBoundParams { rho_b: 32.0, ..p }, 1.0, 0).unwrap();
        assert!(tighter.delta < b.delta);
        assert!(matches!(zhang_sensitivity_bound(&p, 0.0, 0), Err(Error::BoundInvalid(_))));
    }

    #[test]
    fn noise_sigma_reference_value() {
        let s = noise_sigma(1.0, &CertParams::new(1.0, 0.05).unwrap()).unwrap();
        assert!((s - (2.0 * 25f64.ln()).sqrt()).abs() < 1e-12);
        assert!((s - 2.537272).abs() < 1e-6);
    }

    #[test]
    fn zero_sigma_is_identity() {
        let w = ParamVector::new(vec![1.0, -2.0]);
        assert_eq!(add_noise(&w, 0.0, 3).unwrap(), w);
    }
}
