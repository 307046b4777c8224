use crate::dataset::Dataset;
use crate::error::{invalid, Result};
use crate::linalg::{conjugate_gradient, CgConfig};
use crate::model::{LossConfig, ModelSpec, Objective, ParamVector};

/// `w̃ = w* − H_D(w*)⁻¹ ∇f_R(w*)`, the inverse applied by CG.
///
/// Fails with `SingularHessian` when CG meets nonpositive curvature or runs out
/// of iterations, which is the expected outcome on indefinite Hessians.
pub fn newton_one_step(
    spec: &ModelSpec,
    w_star: &ParamVector,
    data: &Dataset,
    retain: &[usize],
    loss_cfg: &LossConfig,
    cg_cfg: &CgConfig,
) -> Result<ParamVector> {
    let full = Objective::new(spec, data, &data.all_indices(), loss_cfg)?;
    let retained = Objective::new(spec, data, retain, loss_cfg)?;
    let g = retained.gradient(w_star);
    let h = full.hessian_at(w_star);
    let sol = conjugate_gradient(&h, &g, cg_cfg)?;
    Ok(w_star.sub(&sol.x))
}

/// `w̃ = w* − (∇²f_R(w*) + λ_N I)⁻¹ ∇f_R(w*)`.
///
/// `λ_N` is added on top of the damping already inside `f`, so `λ_N = 0`
/// gives the plain Newton step on the retained objective.
pub fn damped_newton(
    spec: &ModelSpec,
    w_star: &ParamVector,
    data: &Dataset,
    retain: &[usize],
    loss_cfg: &LossConfig,
    lambda_n: f64,
    cg_cfg: &CgConfig,
) -> Result<ParamVector> {
    if !(lambda_n >= 0.0) || !lambda_n.is_finite() {
        return Err(invalid("damped Newton needs a finite λ_N >= 0"));
    }
    let retained = Objective::new(spec, data, retain, loss_cfg)?;
    let g = retained.gradient(w_star);
    let h = retained.hessian_at(w_star).with_damping(loss_cfg.damping + lambda_n);
    let sol = conjugate_gradient(&h, &g, cg_cfg)?;
    Ok(w_star.sub(&sol.x))
}
