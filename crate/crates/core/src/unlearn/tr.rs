use serde::{Deserialize, Serialize};

use super::{predicted_reduction_floor, prerun_gradient_bound, term, tr_distance_bound, ErrorBudget, SensitivityBound};
use crate::dataset::Dataset;
use crate::error::{invalid, Error, Result};
use crate::model::{LossConfig, ModelSpec, Objective, ParamVector};
use crate::spectral::{
    estimate_local_lipschitz, estimate_mu, update_lipschitz, CurvatureFloor, LipschitzEstimate, LipschitzSource,
    SpectralConfig,
};
use crate::trsolver::{agreement_ratio, clipped_radius, solve_subproblem, update_radius, QuadModel, SolverPath, TrConfig};

/// Lower bound on `f(ŵ)` used by the pre-run distance bound.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ValueFloor {
    /// `f(ŵ) >= 0` for nonnegative losses.
    #[default]
    Zero,
    /// `f(ŵ) >= f(w*) − ||g_0||²/(2μ)` under the curvature floor `μ`.
    StrongConvexity,
}

/// One outer TR iteration (the last trial when steps were rejected).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrStep {
    pub t: usize,
    pub f: f64,
    pub g_norm: f64,
    pub radius: f64,
    pub clipped_radius: f64,
    pub lipschitz: f64,
    pub lipschitz_source: LipschitzSource,
    pub rho: Option<f64>,
    pub accepted: bool,
    pub path: SolverPath,
    pub model_reduction: f64,
    pub actual_reduction: f64,
    pub u_t: f64,
    pub pr_t: f64,
    pub cg_iters: usize,
    pub rejections: usize,
    /// Whether the step achieved the decrease that the distance bound counts.
    pub contracts: bool,
}

#[derive(Debug, Clone)]
pub struct TrRun {
    pub w: ParamVector,
    pub trace: Vec<TrStep>,
    pub stalled: bool,
    pub converged: bool,
    pub f0: f64,
    pub g0_norm: f64,
    pub f_final: f64,
    pub g_final_norm: f64,
    pub mu: CurvatureFloor,
    /// Largest `L_t` among contracting steps.
    pub l_max: f64,
    pub contracting_steps: usize,
}

/// Trust-region iterative Newton unlearning from `w0 = w*` on the retained objective.
#[allow(clippy::too_many_arguments)]
pub fn tr_unlearn(
    spec: &ModelSpec,
    w_star: &ParamVector,
    data: &Dataset,
    retain: &[usize],
    loss_cfg: &LossConfig,
    tr_cfg: &TrConfig,
    spectral_cfg: &SpectralConfig,
    budget: &ErrorBudget,
) -> Result<TrRun> {
    tr_cfg.validate()?;
    spectral_cfg.validate()?;
    budget.validate()?;
    let lambda = loss_cfg.damping;
    if !(lambda > 0.0) {
        return Err(invalid("certified TR unlearning needs damping λ > 0"));
    }
    let obj = Objective::new(spec, data, retain, loss_cfg)?;
    if w_star.len() != obj.dim() {
        return Err(invalid("w* does not match the model dimension"));
    }
    let mut w = w_star.clone();
    let (mut f, mut g) = obj.value_and_gradient(&w);
    if !f.is_finite() || !g.is_finite() {
        return Err(Error::Numeric("objective at w* is not finite".into()));
    }
    let f0 = f;
    let g0_norm = g.norm();
    let stop = tr_cfg.grad_tol * g0_norm.max(1.0);
    let mu = estimate_mu(&obj.hessian_at(&w), lambda, spectral_cfg.mu_method, spectral_cfg)?;

    let mut trace = Vec::new();
    let mut radii: Vec<f64> = Vec::new();
    let mut lipschitz: Option<LipschitzEstimate> = None;
    let mut delta = tr_cfg.delta0;
    let mut running_l_max: f64 = 0.0;
    let mut l_max: f64 = 0.0;
    let mut contracting = 0;
    let mut stalled = false;
    let mut converged = false;

    for t in 0..tr_cfg.max_iters {
        let g_norm = g.norm();
        if g_norm <= stop {
            converged = true;
            break;
        }
        let refresh = t == 0 || (spectral_cfg.refresh_every > 0 && t % spectral_cfg.refresh_every == 0);
        let l_t = match (&lipschitz, refresh) {
            (Some(prev), false) => update_lipschitz(prev, spectral_cfg),
            _ => estimate_local_lipschitz(&obj, &w, spectral_cfg)?,
        };
        lipschitz = Some(l_t);
        running_l_max = running_l_max.max(l_t.value);
        let u_t = prerun_gradient_bound(g0_norm, &radii, running_l_max);
        let h = obj.hessian_at(&w);
        let model = QuadModel { f, g: g.clone(), h: &h };
        let h_norm = (l_t.value - lambda).max(0.0);

        let mut rejections = 0;
        loop {
            let Some(radius) = clipped_radius(delta, g_norm, l_t.value, tr_cfg.tau)? else {
                converged = true;
                break;
            };
            let step = solve_subproblem(&model, radius, tr_cfg)?;
            let w_next = w.add(&step.p);
            let (f_next, g_next) = obj.value_and_gradient(&w_next);
            if !f_next.is_finite() {
                return Err(Error::Numeric(format!("objective became non-finite at iteration {t}")));
            }
            let rho = agreement_ratio(f, f_next, step.model_reduction, 0.0);
            let accepted = rho.is_some_and(|r| r >= tr_cfg.eta1) && f_next < f;
            let actual = f - f_next;
            let contracts =
                accepted && actual >= tr_cfg.eta1 * tr_cfg.kappa * tr_cfg.tau / (2.0 * l_t.value) * g_norm * g_norm;
            let record = TrStep {
                t,
                f,
                g_norm,
                radius: delta,
                clipped_radius: radius,
                lipschitz: l_t.value,
                lipschitz_source: l_t.source,
                rho,
                accepted,
                path: step.path,
                model_reduction: step.model_reduction,
                actual_reduction: actual,
                u_t,
                pr_t: predicted_reduction_floor(step.model_reduction, radius, u_t, h_norm, lambda, budget),
                cg_iters: step.cg_iters,
                rejections,
                contracts,
            };
            if accepted {
                delta = update_radius(delta, rho.expect("accepted steps have a ratio"), tr_cfg);
                radii.push(radius);
                if contracts {
                    contracting += 1;
                    l_max = l_max.max(l_t.value);
                }
                w = w_next;
                f = f_next;
                g = g_next;
                trace.push(record);
                break;
            }
            // ρ < η₁ or a degenerate model: contract
            delta *= tr_cfg.gamma_dec;
            rejections += 1;
            if rejections >= tr_cfg.max_rejections {
                stalled = true;
                trace.push(TrStep { rejections, ..record });
                break;
            }
        }
        if stalled || converged {
            break;
        }
    }
    if !converged && !stalled && g.norm() <= stop {
        converged = true;
    }
    Ok(TrRun {
        g_final_norm: g.norm(),
        w,
        trace,
        stalled,
        converged,
        f0,
        g0_norm,
        f_final: f,
        mu,
        l_max,
        contracting_steps: contracting,
    })
}

/// Pre-run distance bound for a finished TR run.
///
/// Only steps that achieved `f_t − f_{t+1} >= η₁κτ/(2L_t)·||g_t||²` enter the
/// exponent; the remaining accepted steps still decrease `f`, so they cannot
/// loosen the bound.
pub fn tr_sensitivity(run: &TrRun, cfg: &TrConfig, floor: ValueFloor) -> Result<SensitivityBound> {
    let mu = run.mu.mu;
    let f_lower = match floor {
        ValueFloor::Zero => 0.0,
        ValueFloor::StrongConvexity => (run.f0 - run.g0_norm * run.g0_norm / (2.0 * mu)).max(0.0),
    };
    let mut bound = tr_distance_bound(run.f0, f_lower, mu, cfg, run.l_max, run.contracting_steps)?;
    bound.components.push(term("mu", mu));
    bound.components.push(term("f_lower", f_lower));
    Ok(bound)
}
