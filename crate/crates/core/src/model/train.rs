use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use super::{init_params, params::dot, LossConfig, ModelSpec, Objective, ParamVector};
use crate::dataset::Dataset;
use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Optimizer {
    GradientDescent,
    Lbfgs,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub optimizer: Optimizer,
    pub max_iters: usize,
    /// Stop once `||∇f|| <= grad_tol`.
    pub grad_tol: f64,
    /// Fixed step for gradient descent; initial step scale for L-BFGS.
    pub step_size: f64,
    /// Initialisation seed when no warm start is supplied.
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_memory")]
    pub memory: usize,
}

fn default_memory() -> usize {
    10
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { optimizer: Optimizer::Lbfgs, max_iters: 1000, grad_tol: 1e-6, step_size: 1.0, seed: 0, memory: 10 }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.grad_tol > 0.0) {
            return Err(invalid("grad_tol must be positive"));
        }
        if !(self.step_size > 0.0) {
            return Err(invalid("step_size must be positive"));
        }
        if self.optimizer == Optimizer::Lbfgs && self.memory == 0 {
            return Err(invalid("lbfgs memory must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ParamVector,
    pub iterations: usize,
    pub grad_norm: f64,
    pub loss: f64,
    /// `true` when the gradient tolerance was met, `false` when the budget ran out.
    pub converged: bool,
}

/// Minimises the damped loss on `subset` from `w0` (or a seeded init).
pub fn train(
    spec: &ModelSpec,
    data: &Dataset,
    subset: &[usize],
    cfg: &TrainConfig,
    loss_cfg: &LossConfig,
    w0: Option<&ParamVector>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let obj = Objective::new(spec, data, subset, loss_cfg)?;
    let w = match w0 {
        Some(w) if w.len() == spec.param_count() => w.clone(),
        Some(w) => return Err(invalid(format!("warm start has length {}, model needs {}", w.len(), spec.param_count()))),
        None => init_params(spec, cfg.seed)?,
    };
    match cfg.optimizer {
        Optimizer::GradientDescent => gradient_descent(&obj, w, cfg),
        Optimizer::Lbfgs => lbfgs(&obj, w, cfg),
    }
}

fn diverged(iteration: usize) -> Error {
    Error::TrainingFailure(format!("loss became non-finite at iteration {iteration}"))
}

fn gradient_descent(obj: &Objective, mut w: ParamVector, cfg: &TrainConfig) -> Result<TrainOutcome> {
    let (mut f, mut g) = obj.value_and_gradient(&w);
    for it in 0..cfg.max_iters {
        let gn = g.norm();
        if !f.is_finite() || !gn.is_finite() {
            return Err(diverged(it));
        }
        if gn <= cfg.grad_tol {
            return Ok(TrainOutcome { params: w, iterations: it, grad_norm: gn, loss: f, converged: true });
        }
        w.axpy(-cfg.step_size, &g);
        (f, g) = obj.value_and_gradient(&w);
    }
    let gn = g.norm();
    if !f.is_finite() || !gn.is_finite() {
        return Err(diverged(cfg.max_iters));
    }
    Ok(TrainOutcome { params: w, iterations: cfg.max_iters, grad_norm: gn, loss: f, converged: gn <= cfg.grad_tol })
}

/// L-BFGS two-loop recursion with backtracking Armijo line search.
///
/// The sufficient-decrease test tolerates a roundoff-sized increase of
/// `1e-12 |f|` so that very tight gradient tolerances remain reachable.
fn lbfgs(obj: &Objective, mut w: ParamVector, cfg: &TrainConfig) -> Result<TrainOutcome> {
    const ARMIJO: f64 = 1e-4;
    const MAX_BACKTRACK: usize = 50;
    let mut history: VecDeque<(ParamVector, ParamVector, f64)> = VecDeque::with_capacity(cfg.memory);
    let (mut f, mut g) = obj.value_and_gradient(&w);
    if !f.is_finite() {
        return Err(diverged(0));
    }
    let mut stalled = 0;
    for it in 0..cfg.max_iters {
        let gn = g.norm();
        if !gn.is_finite() {
            return Err(diverged(it));
        }
        if gn <= cfg.grad_tol {
            return Ok(TrainOutcome { params: w, iterations: it, grad_norm: gn, loss: f, converged: true });
        }

        // two-loop recursion: direction = -H_k g
        let mut q = g.clone();
        let mut alphas = Vec::with_capacity(history.len());
        for (s, y, rho) in history.iter().rev() {
            let a = rho * s.dot(&q);
            q.axpy(-a, y);
            alphas.push(a);
        }
        let gamma = match history.back() {
            Some((s, y, _)) => s.dot(y) / y.norm_sq(),
            None => cfg.step_size / gn.max(1.0),
        };
        q.scale(gamma);
        for ((s, y, rho), a) in history.iter().zip(alphas.iter().rev()) {
            let b = rho * y.dot(&q);
            q.axpy(a - b, s);
        }
        let mut dir = q.scaled(-1.0);
        let mut slope = dir.dot(&g);
        if !(slope < 0.0) {
            history.clear();
            dir = g.scaled(-cfg.step_size / gn.max(1.0));
            slope = dir.dot(&g);
        }

        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..MAX_BACKTRACK {
            let trial = w.add(&dir.scaled(step));
            let (ft, gt) = obj.value_and_gradient(&trial);
            if ft.is_finite() && ft <= f + ARMIJO * step * slope + 1e-12 * f.abs() {
                accepted = Some((trial, ft, gt));
                break;
            }
            step *= 0.5;
        }
        let Some((w_next, f_next, g_next)) = accepted else {
            stalled += 1;
            history.clear();
            if stalled > 3 {
                break;
            }
            continue;
        };
        stalled = 0;
        let s = w_next.sub(&w);
        let y = g_next.sub(&g);
        let sy = dot(&s, &y);
        if sy > 1e-16 * s.norm() * y.norm() && sy > 0.0 {
            if history.len() == cfg.memory {
                history.pop_front();
            }
            history.push_back((s, y, 1.0 / sy));
        }
        w = w_next;
        f = f_next;
        g = g_next;
    }
    let gn = g.norm();
    Ok(TrainOutcome { converged: gn <= cfg.grad_tol, params: w, iterations: cfg.max_iters, grad_norm: gn, loss: f })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::gen_synthetic;
    use crate::model::{micro_f1, ModelSpec};

    #[test]
    fn lbfgs_converges_on_strongly_convex_logistic() {
        let data = gen_synthetic(2, 2, 100, 4.0, 7).unwrap();
        let spec = ModelSpec::logistic(2, 2);
        let cfg = TrainConfig { grad_tol: 1e-8, ..TrainConfig::default() };
        let out = train(&spec, &data, &data.all_indices(), &cfg, &LossConfig { damping: 0.1 }, None).unwrap();
        assert!(out.converged && out.grad_norm <= 1e-8, "{out:?}");
    }

    #[test]
    fn synthetic_blobs_are_separable() {
        let data = gen_synthetic(2, 2, 100, 4.0, 7).unwrap();
        assert_eq!(data.len(), 200);
        let spec = ModelSpec::logistic(2, 2);
        let out = train(&spec, &data, &data.all_indices(), &TrainConfig::default(), &LossConfig { damping: 1e-3 }, None)
            .unwrap();
        let f1 = micro_f1(&spec, &out.params, &data, &data.all_indices()).unwrap();
        assert!(f1 >= 0.99, "train accuracy {f1}");
    }

    #[test]
    fn warm_start_at_optimum_returns_immediately() {
        let data = gen_synthetic(3, 4, 30, 2.0, 1).unwrap();
        let spec = ModelSpec::logistic(4, 3);
        let cfg = TrainConfig { grad_tol: 1e-7, ..TrainConfig::default() };
        let loss_cfg = LossConfig { damping: 0.1 };
        let idx = data.all_indices();
        let first = train(&spec, &data, &idx, &cfg, &loss_cfg, None).unwrap();
        let again = train(&spec, &data, &idx, &cfg, &loss_cfg, Some(&first.params)).unwrap();
        assert!(again.iterations <= 2);
    }

    #[test]
    fn divergent_gradient_descent_is_reported() {
        let data = gen_synthetic(2, 2, 20, 50.0, 1).unwrap();
        let spec = ModelSpec::linear_regression(2, 2);
        let cfg = TrainConfig { optimizer: Optimizer::GradientDescent, step_size: 10.0, max_iters: 2000, ..Default::default() };
        assert!(matches!(
            train(&spec, &data, &data.all_indices(), &cfg, &LossConfig { damping: 0.0 }, None),
            Err(Error::TrainingFailure(_))
        ));
    }
}
