//! Unlearning updates, certified sensitivity bounds and Gaussian noise.

mod bounds;
mod diagnostic;
mod newton;
mod tr;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::model::ParamVector;

pub use bounds::{
    add_noise, noise_sigma, predicted_reduction_floor, prerun_gradient_bound, tr_distance_bound, zhang_sensitivity_bound,
};
pub use diagnostic::{tr_vs_newton_diagnostic, DiagnosticInput, DiagnosticReport};
pub use newton::{damped_newton, newton_one_step};
pub use tr::{tr_sensitivity, tr_unlearn, TrRun, TrStep, ValueFloor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Newton,
    Damped,
    Tr,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Newton => "newton",
            Method::Damped => "damped",
            Method::Tr => "tr",
        }
    }
}

/// `(ε, δ)` of the certification target. `ε = +inf` disables noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CertParams {
    pub epsilon: f64,
    pub delta: f64,
}

impl CertParams {
    pub fn new(epsilon: f64, delta: f64) -> Result<Self> {
        let p = Self { epsilon, delta };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) {
            return Err(invalid("epsilon must be positive"));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(invalid("delta must lie in (0, 1)"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BoundMethod {
    TrCorollary,
    ZhangAppendixB,
    OracleExact,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundTerm {
    pub name: String,
    pub value: f64,
}

/// Certified upper bound `Δ ≥ ||w̃ − ŵ||`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityBound {
    pub delta: f64,
    pub method: BoundMethod,
    pub components: Vec<BoundTerm>,
}

impl SensitivityBound {
    pub fn component(&self, name: &str) -> Option<f64> {
        self.components.iter().find(|c| c.name == name).map(|c| c.value)
    }
}

pub(crate) fn term(name: &str, value: f64) -> BoundTerm {
    BoundTerm { name: name.to_string(), value }
}

/// Oracle error levels; all zero for exact analytic gradients and HVPs.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct ErrorBudget {
    pub eps_g: f64,
    pub eps_h: f64,
    pub eps_ihvp: f64,
}

impl ErrorBudget {
    pub fn validate(&self) -> Result<()> {
        if [self.eps_g, self.eps_h, self.eps_ihvp].iter().any(|e| !(*e >= 0.0) || !e.is_finite()) {
            return Err(invalid("error budget entries must be finite and nonnegative"));
        }
        Ok(())
    }
}

/// Global constants of the baseline sensitivity bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BaselineBoundParams {
    /// Parameter-norm bound.
    pub c: f64,
    /// Gradient-norm bound.
    pub g: f64,
    /// Gradient-Lipschitz constant.
    pub l: f64,
    /// Hessian-Lipschitz constant.
    pub m: f64,
    pub lambda_min: f64,
    /// Model dimension inside `ln d`; `None` means the parameter count of the model.
    #[serde(default)]
    pub d: Option<f64>,
    pub rho_b: f64,
}

impl BaselineBoundParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("c", self.c), ("g", self.g), ("l", self.l), ("m", self.m), ("rho_b", self.rho_b)] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(invalid(format!("baseline.{name} must be positive")));
            }
        }
        if !self.lambda_min.is_finite() {
            return Err(invalid("baseline.lambda_min must be finite"));
        }
        if let Some(d) = self.d {
            if !(d > 0.0) || !d.is_finite() {
                return Err(invalid("baseline.d must be positive"));
            }
        }
        Ok(())
    }
}

/// Output of one certified unlearning run. Parameter vectors and wall-clock
/// time are kept out of the serialized form; callers store them separately.
#[derive(Debug, Clone, Serialize)]
pub struct UnlearnResult {
    pub method: Method,
    #[serde(skip)]
    pub w_pre_noise: ParamVector,
    pub sigma: f64,
    #[serde(skip)]
    pub w_certified: ParamVector,
    pub bound: SensitivityBound,
    pub cert: CertParams,
    pub trace: Vec<TrStep>,
    pub stalled: bool,
    #[serde(skip)]
    pub seconds: f64,
}

/// Calibrates `σ` from `bound` and adds seeded Gaussian noise to `w_pre_noise`.
pub fn certify(
    method: Method,
    w_pre_noise: ParamVector,
    bound: SensitivityBound,
    cert: CertParams,
    noise_seed: u64,
) -> Result<UnlearnResult> {
    let sigma = noise_sigma(bound.delta, &cert)?;
    let w_certified = add_noise(&w_pre_noise, sigma, noise_seed)?;
    Ok(UnlearnResult {
        method,
        w_pre_noise,
        sigma,
        w_certified,
        bound,
        cert,
        trace: Vec::new(),
        stalled: false,
        seconds: 0.0,
    })
}
