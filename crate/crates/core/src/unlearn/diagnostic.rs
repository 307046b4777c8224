use serde::Serialize;

use crate::error::Result;
use crate::linalg::{conjugate_gradient, CgConfig, FnOperator, LinearOperator, Shifted};
use crate::model::{Objective, ParamVector};
use crate::spectral::{smallest_eigenvalue, spectral_norm, SpectralConfig};
use crate::trsolver::{solve_subproblem, QuadModel, TrConfig};

/// Inputs for comparing one TR step against a damped Newton step that uses a
/// possibly mismatched Hessian estimate.
pub struct DiagnosticInput<'a> {
    pub obj: &'a Objective,
    pub w: &'a [f64],
    /// `L̂_t`; the TR radius is `||g_t||/L̂_t`.
    pub l_hat: f64,
    pub mu: f64,
    pub lambda_n: f64,
    /// Undamped Hessian estimate `H_est`.
    pub h_est: &'a dyn LinearOperator,
    pub tr_cfg: &'a TrConfig,
    pub cg: CgConfig,
    pub spectral: SpectralConfig,
}

#[derive(Debug, Clone, Serialize)]
pub struct DiagnosticReport {
    pub g_norm: f64,
    pub radius: f64,
    pub inverse_norm: f64,
    pub c1: bool,
    pub kappa_tr: f64,
    pub alpha_n: f64,
    pub c2: bool,
    pub tr_step_norm: f64,
    pub newton_step_norm: f64,
    pub tr_grad_norm: f64,
    pub newton_grad_norm: f64,
    /// `||∇f(w+p_TR)|| <= ||∇f(w+p_N)|| + 1e-6`.
    pub tr_not_worse: bool,
    /// Set when the Newton solve failed; the comparison is then skipped.
    pub newton_error: Option<String>,
}

/// Evaluates conditions (C1) `r_t <= ||(H_est+λ_N I)⁻¹||·||g_t||` and
/// (C2) `λ/(μ+λ) <= ||I − H_t (H_est+λ_N I)⁻¹||` and measures both post-step
/// gradient norms. Violations are reported, never raised.
pub fn tr_vs_newton_diagnostic(input: &DiagnosticInput) -> Result<DiagnosticReport> {
    let obj = input.obj;
    let (f, g) = obj.value_and_gradient(input.w);
    let g_norm = g.norm();
    let h_t = obj.hessian_at(input.w);
    let radius = g_norm / input.l_hat;
    let model = QuadModel { f, g: g.clone(), h: &h_t };
    let p_tr = if g_norm > 0.0 { solve_subproblem(&model, radius, input.tr_cfg)?.p } else { ParamVector::zeros(g.len()) };
    let tr_grad_norm = obj.gradient(&ParamVector::new(input.w.to_vec()).add(&p_tr)).norm();

    let b = Shifted { inner: input.h_est, shift: input.lambda_n };
    let lambda = obj.damping();
    let kappa_tr = lambda / (input.mu + lambda);
    let min_eig = smallest_eigenvalue(&b, &input.spectral)?;
    let inverse_norm = if min_eig > 0.0 { 1.0 / min_eig } else { f64::INFINITY };
    let c1 = radius <= inverse_norm * g_norm;

    let newton = conjugate_gradient(&b, &g, &input.cg);
    let (newton_step_norm, newton_grad_norm, newton_error) = match &newton {
        Ok(sol) => {
            let p_n = sol.x.scaled(-1.0);
            let gn = obj.gradient(&ParamVector::new(input.w.to_vec()).add(&p_n)).norm();
            (p_n.norm(), gn, None)
        }
        Err(e) => (f64::NAN, f64::NAN, Some(e.to_string())),
    };

    // ||A|| for A = I − H_t B⁻¹ via power iteration on A'A = (I − B⁻¹H_t)(I − H_t B⁻¹)
    let solve = |v: &[f64]| match conjugate_gradient(&b, v, &input.cg) {
        Ok(sol) => sol.x,
        Err(_) => ParamVector::new(vec![f64::NAN; v.len()]),
    };
    let ata = FnOperator::new(g.len(), |v: &[f64]| {
        let mut av = ParamVector::new(v.to_vec());
        av.axpy(-1.0, &h_t.apply(&solve(v)));
        let mut out = av.clone();
        out.axpy(-1.0, &solve(&h_t.apply(&av)));
        out
    });
    let alpha_n = spectral_norm(&ata, &input.spectral).map(f64::sqrt).unwrap_or(f64::NAN);
    let c2 = kappa_tr <= alpha_n;

    Ok(DiagnosticReport {
        g_norm,
        radius,
        inverse_norm,
        c1,
        kappa_tr,
        alpha_n,
        c2,
        tr_step_norm: p_tr.norm(),
        newton_step_norm,
        tr_grad_norm,
        newton_grad_norm,
        tr_not_worse: newton_error.is_none() && tr_grad_norm <= newton_grad_norm + 1e-6,
        newton_error,
    })
}
