//! Trust-region pieces: clipped radius, quadratic model, Steihaug truncated CG
//! with a Cauchy safeguard, agreement ratio and radius update.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::linalg::LinearOperator;
use crate::model::ParamVector;

/// Predicted reductions at or below this are treated as a degenerate model.
pub const MIN_PREDICTED_REDUCTION: f64 = 1e-14;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrConfig {
    pub eta1: f64,
    pub eta2: f64,
    pub gamma_dec: f64,
    pub gamma_inc: f64,
    pub tau: f64,
    pub delta0: f64,
    /// Outer iteration cap `T`.
    pub max_iters: usize,
    pub cg_max_iters: usize,
    /// Relative CG residual target. `None` uses the forcing rule
    /// `min(0.5, sqrt(||g||)) * ||g||`.
    pub cg_rel_tol: Option<f64>,
    /// Required fraction of the Cauchy decrease.
    pub kappa: f64,
    pub max_rejections: usize,
    /// Stop once `||g_t|| <= grad_tol * max(1, ||g_0||)`.
    pub grad_tol: f64,
}

impl Default for TrConfig {
    fn default() -> Self {
        Self {
            eta1: 0.1,
            eta2: 0.9,
            gamma_dec: 0.5,
            gamma_inc: 2.0,
            tau: 1.0,
            delta0: 1.0,
            max_iters: 5,
            cg_max_iters: 50,
            cg_rel_tol: None,
            kappa: 0.5,
            max_rejections: 10,
            grad_tol: 1e-6,
        }
    }
}

impl TrConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 < self.eta1 && self.eta1 < self.eta2 && self.eta2 < 1.0) {
            return Err(invalid("need 0 < eta1 < eta2 < 1"));
        }
        if !(0.0 < self.gamma_dec && self.gamma_dec < 1.0 && self.gamma_inc > 1.0) {
            return Err(invalid("need 0 < gamma_dec < 1 < gamma_inc"));
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return Err(invalid("tau must lie in (0, 1]"));
        }
        if !(self.kappa > 0.0 && self.kappa <= 1.0) {
            return Err(invalid("kappa must lie in (0, 1]"));
        }
        if !(self.delta0 > 0.0) {
            return Err(invalid("delta0 must be positive"));
        }
        if self.cg_max_iters == 0 {
            return Err(invalid("cg_max_iters must be positive"));
        }
        if let Some(t) = self.cg_rel_tol {
            if !(t > 0.0) {
                return Err(invalid("cg_rel_tol must be positive"));
            }
        }
        if !(self.grad_tol >= 0.0) {
            return Err(invalid("grad_tol must be nonnegative"));
        }
        Ok(())
    }
}

/// `m(p) = f + g'p + ½ p'Hp`.
pub struct QuadModel<'a> {
    pub f: f64,
    pub g: ParamVector,
    pub h: &'a dyn LinearOperator,
}

impl QuadModel<'_> {
    pub fn value(&self, p: &[f64]) -> f64 {
        self.f - self.reduction(p)
    }

    /// `m(0) − m(p)`.
    pub fn reduction(&self, p: &[f64]) -> f64 {
        let hp = self.h.apply(p);
        -(self.g.dot(p) + 0.5 * hp.dot(p))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolverPath {
    CgInterior,
    CgBoundary,
    CauchyFallback,
}

#[derive(Debug, Clone)]
pub struct SubproblemStep {
    pub p: ParamVector,
    pub path: SolverPath,
    /// `m(0) − m(p)`.
    pub model_reduction: f64,
    pub cauchy_reduction: f64,
    pub cg_iters: usize,
}

/// `min(Δ, τ·||g||/L)`; `None` when `||g|| = 0` (stationary point).
pub fn clipped_radius(delta: f64, g_norm: f64, l: f64, tau: f64) -> Result<Option<f64>> {
    if !(delta > 0.0 && l > 0.0 && tau > 0.0 && g_norm >= 0.0) {
        return Err(invalid(format!("clipped_radius({delta}, {g_norm}, {l}, {tau}) needs positive inputs")));
    }
    if g_norm == 0.0 {
        return Ok(None);
    }
    Ok(Some(delta.min(tau * g_norm / l)))
}

/// `p_C = −t* g`, `t* = min(r/||g||, ||g||²/g'Hg)` (second branch only for positive curvature).
pub fn cauchy_point(g: &[f64], hg: &[f64], radius: f64) -> ParamVector {
    let g = ParamVector::new(g.to_vec());
    let gn = g.norm();
    if gn == 0.0 {
        return ParamVector::zeros(g.len());
    }
    let ghg = g.dot(hg);
    let mut t = radius / gn;
    if ghg > 0.0 {
        t = t.min(gn * gn / ghg);
    }
    g.scaled(-t)
}

fn cauchy_reduction(g: &ParamVector, hg: &[f64], radius: f64) -> (ParamVector, f64) {
    let p = cauchy_point(g, hg, radius);
    let gn2 = g.norm_sq();
    // p = −t g  ⇒  m(0) − m(p) = t||g||² − ½ t² g'Hg
    let t = if gn2 > 0.0 { p.norm() / gn2.sqrt() } else { 0.0 };
    let red = t * gn2 - 0.5 * t * t * g.dot(hg);
    (p, red)
}

/// Positive `s` with `||p + s d|| = radius`.
fn to_boundary(p: &[f64], d: &[f64], radius: f64) -> f64 {
    let pp = crate::model::params::dot(p, p);
    let pd = crate::model::params::dot(p, d);
    let dd = crate::model::params::dot(d, d);
    let disc = (pd * pd + dd * (radius * radius - pp)).max(0.0);
    (-pd + disc.sqrt()) / dd
}

/// Steihaug truncated CG from `p = 0`. Falls back to the Cauchy point when the
/// CG step does not achieve `κ ×` the Cauchy decrease.
pub fn solve_subproblem(model: &QuadModel, radius: f64, cfg: &TrConfig) -> Result<SubproblemStep> {
    if !(radius > 0.0) {
        return Err(invalid("trust-region radius must be positive"));
    }
    let d_len = model.g.len();
    let g = &model.g;
    let gn = g.norm();
    let mut p = ParamVector::zeros(d_len);
    let mut hp = ParamVector::zeros(d_len);
    if gn == 0.0 {
        return Ok(SubproblemStep { p, path: SolverPath::CgInterior, model_reduction: 0.0, cauchy_reduction: 0.0, cg_iters: 0 });
    }
    let tol = match cfg.cg_rel_tol {
        Some(rel) => rel * gn,
        None => gn.sqrt().min(0.5) * gn,
    };

    let mut r = g.clone();
    let mut d = g.scaled(-1.0);
    let mut rr = r.norm_sq();
    let mut hg: Option<ParamVector> = None;
    let mut path = SolverPath::CgInterior;
    let mut iters = 0;
    for j in 0..cfg.cg_max_iters {
        iters = j + 1;
        let hd = model.h.apply_checked(&d)?;
        if j == 0 {
            // d_0 = −g
            hg = Some(hd.scaled(-1.0));
        }
        let dhd = d.dot(&hd);
        if dhd <= 0.0 {
            let s = to_boundary(&p, &d, radius);
            p.axpy(s, &d);
            hp.axpy(s, &hd);
            path = SolverPath::CgBoundary;
            break;
        }
        let alpha = rr / dhd;
        let trial = p.add(&d.scaled(alpha));
        if trial.norm() >= radius {
            let s = to_boundary(&p, &d, radius);
            p.axpy(s, &d);
            hp.axpy(s, &hd);
            path = SolverPath::CgBoundary;
            break;
        }
        p = trial;
        hp.axpy(alpha, &hd);
        r.axpy(alpha, &hd);
        let rr_next = r.norm_sq();
        if rr_next.sqrt() <= tol {
            break;
        }
        let beta = rr_next / rr;
        rr = rr_next;
        for (di, ri) in d.iter_mut().zip(r.iter()) {
            *di = -ri + beta * *di;
        }
    }
    let model_reduction = -(g.dot(&p) + 0.5 * hp.dot(&p));
    let hg = hg.expect("at least one CG iteration");
    let (pc, cauchy_red) = cauchy_reduction(g, &hg, radius);
    if !model_reduction.is_finite() || !p.is_finite() {
        return Err(Error::Numeric("subproblem step is not finite".into()));
    }
    if model_reduction < cfg.kappa * cauchy_red {
        return Ok(SubproblemStep {
            p: pc,
            path: SolverPath::CauchyFallback,
            model_reduction: cauchy_red,
            cauchy_reduction: cauchy_red,
            cg_iters: iters,
        });
    }
    Ok(SubproblemStep { p, path, model_reduction, cauchy_reduction: cauchy_red, cg_iters: iters })
}

/// `ρ = (f_t − f_next)/(m0 − m_p)`; `None` for a degenerate predicted reduction.
pub fn agreement_ratio(f_t: f64, f_next: f64, m0: f64, m_p: f64) -> Option<f64> {
    let predicted = m0 - m_p;
    if !(predicted > MIN_PREDICTED_REDUCTION) {
        return None;
    }
    Some((f_t - f_next) / predicted)
}

pub fn update_radius(delta: f64, rho: f64, cfg: &TrConfig) -> f64 {
    if rho >= cfg.eta2 {
        cfg.gamma_inc * delta
    } else if rho >= cfg.eta1 {
        delta
    } else {
        cfg.gamma_dec * delta
    }
}
