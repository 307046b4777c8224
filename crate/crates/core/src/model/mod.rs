//! Differentiable models: damped empirical loss, gradient, exact HVPs, training
//! and classification metrics.
//!
//! All three supported hypothesis classes are dense feed-forward networks:
//! linear regression is a single affine layer with squared error against
//! one-hot targets, logistic regression a single affine layer with softmax
//! cross-entropy, and the MLP stacks hidden tanh/relu layers before a softmax
//! head. Parameters are laid out layer by layer as a row-major `(out, in)`
//! weight block followed by the `out` biases.

pub(crate) mod network;
pub mod params;
mod train;

use ndarray::{Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{invalid, Error, Result};
use crate::linalg::LinearOperator;
use network::LayerShape;

pub use params::ParamVector;
pub use train::{train, Optimizer, TrainConfig, TrainOutcome};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    LinearRegression,
    Logistic,
    Mlp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    #[default]
    Tanh,
    Relu,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum OutputLoss {
    SquaredError,
    CrossEntropy,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub kind: ModelKind,
    /// Full layer widths including input and output (MLP only).
    #[serde(default)]
    pub layer_sizes: Vec<usize>,
    #[serde(default)]
    pub activation: Activation,
    pub input_dim: usize,
    pub num_classes: usize,
}

impl ModelSpec {
    pub fn linear_regression(input_dim: usize, num_outputs: usize) -> Self {
        Self {
            kind: ModelKind::LinearRegression,
            layer_sizes: Vec::new(),
            activation: Activation::Tanh,
            input_dim,
            num_classes: num_outputs,
        }
    }

    pub fn logistic(input_dim: usize, num_classes: usize) -> Self {
        Self { kind: ModelKind::Logistic, layer_sizes: Vec::new(), activation: Activation::Tanh, input_dim, num_classes }
    }

    pub fn mlp(layer_sizes: Vec<usize>, activation: Activation) -> Self {
        let input_dim = layer_sizes.first().copied().unwrap_or(0);
        let num_classes = layer_sizes.last().copied().unwrap_or(0);
        Self { kind: ModelKind::Mlp, layer_sizes, activation, input_dim, num_classes }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.num_classes == 0 {
            return Err(invalid("input_dim and num_classes must be positive"));
        }
        if self.kind == ModelKind::Mlp {
            if self.layer_sizes.len() < 2 {
                return Err(invalid("mlp needs at least input and output layer sizes"));
            }
            if self.layer_sizes.iter().any(|&s| s == 0) {
                return Err(invalid("layer sizes must be positive"));
            }
            if self.layer_sizes[0] != self.input_dim || *self.layer_sizes.last().unwrap() != self.num_classes {
                return Err(invalid("layer_sizes must start at input_dim and end at num_classes"));
            }
        }
        Ok(())
    }

    pub(crate) fn sizes(&self) -> Vec<usize> {
        match self.kind {
            ModelKind::Mlp => self.layer_sizes.clone(),
            _ => vec![self.input_dim, self.num_classes],
        }
    }

    pub(crate) fn output_loss(&self) -> OutputLoss {
        match self.kind {
            ModelKind::LinearRegression => OutputLoss::SquaredError,
            _ => OutputLoss::CrossEntropy,
        }
    }

    pub fn is_classifier(&self) -> bool {
        self.kind != ModelKind::LinearRegression
    }

    /// Number of scalar parameters `d`.
    pub fn param_count(&self) -> usize {
        self.sizes().windows(2).map(|p| p[0] * p[1] + p[1]).sum()
    }

    fn check_data(&self, data: &Dataset) -> Result<()> {
        if data.dim() != self.input_dim {
            return Err(invalid(format!("dataset dim {} does not match model input {}", data.dim(), self.input_dim)));
        }
        if data.num_classes() > self.num_classes {
            return Err(invalid("dataset has more classes than the model outputs"));
        }
        Ok(())
    }
}

/// Damping `λ` of `f(w) = L(w) + (λ/2)||w||²`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub damping: f64,
}

impl LossConfig {
    pub fn new(damping: f64) -> Result<Self> {
        if !(damping >= 0.0) || !damping.is_finite() {
            return Err(invalid("damping must be finite and nonnegative"));
        }
        Ok(Self { damping })
    }
}

/// Uniform `[-1/sqrt(fan_in), 1/sqrt(fan_in)]` entries, deterministic per seed.
pub fn init_params(spec: &ModelSpec, seed: u64) -> Result<ParamVector> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(spec.param_count());
    for layer in network::layer_shapes(spec) {
        let scale = 1.0 / (layer.fan_in as f64).sqrt();
        for _ in 0..layer.fan_out * (layer.fan_in + 1) {
            out.push(rng.random_range(-scale..=scale));
        }
    }
    Ok(ParamVector::new(out))
}

/// The damped empirical objective restricted to one index subset.
///
/// Features of the subset are gathered once so that repeated evaluations
/// (CG, power iteration) do not re-copy the dataset.
#[derive(Debug, Clone)]
pub struct Objective {
    spec: ModelSpec,
    layers: Vec<LayerShape>,
    x: Array2<f64>,
    y: Vec<usize>,
    damping: f64,
}

impl Objective {
    pub fn new(spec: &ModelSpec, data: &Dataset, subset: &[usize], cfg: &LossConfig) -> Result<Self> {
        spec.validate()?;
        spec.check_data(data)?;
        if subset.is_empty() {
            return Err(invalid("loss subset is empty"));
        }
        let mut x = Array2::zeros((subset.len(), data.dim()));
        let mut y = Vec::with_capacity(subset.len());
        for (r, &i) in subset.iter().enumerate() {
            if i >= data.len() {
                return Err(invalid(format!("index {i} out of range")));
            }
            x.row_mut(r).iter_mut().zip(data.row(i)).for_each(|(d, s)| *d = *s);
            y.push(data.labels()[i]);
        }
        Ok(Self { spec: spec.clone(), layers: network::layer_shapes(spec), x, y, damping: cfg.damping })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn damping(&self) -> f64 {
        self.damping
    }

    pub fn dim(&self) -> usize {
        self.spec.param_count()
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    fn check_w(&self, w: &[f64]) {
        assert_eq!(w.len(), self.dim(), "parameter vector length does not match model");
    }

    /// Same data, different damping.
    pub fn with_damping(&self, damping: f64) -> Self {
        Self { damping, ..self.clone() }
    }

    /// Mean data loss without the damping term.
    pub fn data_loss(&self, w: &[f64]) -> f64 {
        self.check_w(w);
        let fwd = network::forward(&self.spec, &self.layers, w, self.x.view());
        let losses = network::example_losses(self.spec.output_loss(), fwd.logits(), &self.y);
        losses.iter().sum::<f64>() / self.y.len() as f64
    }

    pub fn value(&self, w: &[f64]) -> f64 {
        self.data_loss(w) + 0.5 * self.damping * params::dot(w, w)
    }

    pub fn gradient(&self, w: &[f64]) -> ParamVector {
        self.value_and_gradient(w).1
    }

    pub fn value_and_gradient(&self, w: &[f64]) -> (f64, ParamVector) {
        self.check_w(w);
        let fwd = network::forward(&self.spec, &self.layers, w, self.x.view());
        let losses = network::example_losses(self.spec.output_loss(), fwd.logits(), &self.y);
        let value = losses.iter().sum::<f64>() / self.y.len() as f64 + 0.5 * self.damping * params::dot(w, w);
        let mut g = ParamVector::new(network::gradient(&self.spec, &self.layers, w, &fwd, &self.y));
        g.axpy(self.damping, w);
        (value, g)
    }

    /// Damped Hessian–vector product `(∇²L(w) + λI) v`.
    pub fn hvp(&self, w: &[f64], v: &[f64]) -> ParamVector {
        self.hessian_at(w).apply(v)
    }

    /// Operator view of the damped Hessian at `w` (forward pass cached).
    pub fn hessian_at(&self, w: &[f64]) -> DampedHessian<'_> {
        self.check_w(w);
        let fwd = network::forward(&self.spec, &self.layers, w, self.x.view());
        DampedHessian { obj: self, w: w.to_vec(), fwd, damping: self.damping }
    }

    /// Per-example (undamped) losses, in subset order.
    pub fn example_losses(&self, w: &[f64]) -> Vec<f64> {
        self.check_w(w);
        let fwd = network::forward(&self.spec, &self.layers, w, self.x.view());
        network::example_losses(self.spec.output_loss(), fwd.logits(), &self.y)
    }

    pub fn logits(&self, w: &[f64]) -> Array2<f64> {
        self.check_w(w);
        network::forward(&self.spec, &self.layers, w, self.x.view()).logits().clone()
    }

    pub fn features(&self) -> ArrayView2<'_, f64> {
        self.x.view()
    }
}

/// `(∇²L(w) + λI)` at a fixed point, with the forward pass cached.
pub struct DampedHessian<'a> {
    obj: &'a Objective,
    w: Vec<f64>,
    fwd: network::Forward,
    damping: f64,
}

impl DampedHessian<'_> {
    /// Same operator with a different damping added to the data Hessian.
    pub fn with_damping(mut self, damping: f64) -> Self {
        self.damping = damping;
        self
    }
}

impl LinearOperator for DampedHessian<'_> {
    fn dim(&self) -> usize {
        self.w.len()
    }

    fn apply(&self, v: &[f64]) -> ParamVector {
        let mut out =
            ParamVector::new(network::hessian_vector(&self.obj.spec, &self.obj.layers, &self.w, &self.fwd, &self.obj.y, v));
        out.axpy(self.damping, v);
        out
    }
}

/// `f(w)` on `subset`: mean per-example loss plus `(λ/2)||w||²`.
pub fn loss(spec: &ModelSpec, w: &ParamVector, data: &Dataset, subset: &[usize], cfg: &LossConfig) -> Result<f64> {
    check_len(spec, w)?;
    Ok(Objective::new(spec, data, subset, cfg)?.value(w))
}

pub fn grad(spec: &ModelSpec, w: &ParamVector, data: &Dataset, subset: &[usize], cfg: &LossConfig) -> Result<ParamVector> {
    check_len(spec, w)?;
    Ok(Objective::new(spec, data, subset, cfg)?.gradient(w))
}

pub fn hvp(
    spec: &ModelSpec,
    w: &ParamVector,
    data: &Dataset,
    subset: &[usize],
    cfg: &LossConfig,
    v: &ParamVector,
) -> Result<ParamVector> {
    check_len(spec, w)?;
    check_len(spec, v)?;
    if !v.is_finite() {
        return Err(Error::Numeric("hvp direction".into()));
    }
    Ok(Objective::new(spec, data, subset, cfg)?.hvp(w, v))
}

fn check_len(spec: &ModelSpec, w: &ParamVector) -> Result<()> {
    if w.len() != spec.param_count() {
        return Err(invalid(format!("parameter vector has length {}, model needs {}", w.len(), spec.param_count())));
    }
    Ok(())
}

/// Argmax predictions; ties go to the lowest class index.
pub fn predict(spec: &ModelSpec, w: &ParamVector, data: &Dataset, subset: &[usize]) -> Result<Vec<usize>> {
    check_len(spec, w)?;
    let obj = Objective::new(spec, data, subset, &LossConfig { damping: 0.0 })?;
    Ok(obj
        .logits(w)
        .rows()
        .into_iter()
        .map(|row| {
            let mut best = 0;
            for k in 1..row.len() {
                if row[k] > row[best] {
                    best = k;
                }
            }
            best
        })
        .collect())
}

/// Micro-averaged F1, which equals accuracy for single-label multiclass prediction.
pub fn micro_f1(spec: &ModelSpec, w: &ParamVector, data: &Dataset, subset: &[usize]) -> Result<f64> {
    if !spec.is_classifier() {
        return Err(Error::UnsupportedMetric("micro F1 needs a classification model".into()));
    }
    let preds = predict(spec, w, data, subset)?;
    let correct = preds.iter().zip(subset).filter(|(p, &i)| **p == data.labels()[i]).count();
    Ok(correct as f64 / subset.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::gen_synthetic;

    #[test]
    fn parameter_counts() {
        assert_eq!(ModelSpec::logistic(3, 2).param_count(), 8);
        assert_eq!(ModelSpec::mlp(vec![784, 64, 10], Activation::Tanh).param_count(), 50890);
    }

    #[test]
    fn init_is_deterministic() {
        let spec = ModelSpec::mlp(vec![4, 3, 2], Activation::Relu);
        assert_eq!(init_params(&spec, 5).unwrap(), init_params(&spec, 5).unwrap());
        assert_ne!(init_params(&spec, 5).unwrap(), init_params(&spec, 6).unwrap());
    }

    #[test]
    fn zero_weights_give_log2() {
        let data = gen_synthetic(2, 3, 5, 1.0, 0).unwrap();
        let spec = ModelSpec::logistic(3, 2);
        let w = ParamVector::zeros(spec.param_count());
        let l = loss(&spec, &w, &data, &data.all_indices(), &LossConfig { damping: 0.0 }).unwrap();
        assert!((l - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn damping_term_arithmetic() {
        let data = gen_synthetic(2, 1, 3, 1.0, 0).unwrap();
        let spec = ModelSpec::logistic(1, 2);
        // ||w||² = 9
        let w = ParamVector::new(vec![2.0, -2.0, 1.0, 0.0]);
        let idx = data.all_indices();
        let base = loss(&spec, &w, &data, &idx, &LossConfig { damping: 0.0 }).unwrap();
        let damped = loss(&spec, &w, &data, &idx, &LossConfig { damping: 2.0 }).unwrap();
        assert!((damped - base - 9.0).abs() < 1e-12);
    }

    #[test]
    fn empty_subset_is_rejected() {
        let data = gen_synthetic(2, 2, 3, 1.0, 0).unwrap();
        let spec = ModelSpec::logistic(2, 2);
        let w = ParamVector::zeros(6);
        assert!(loss(&spec, &w, &data, &[], &LossConfig { damping: 0.0 }).is_err());
    }

    #[test]
    fn f1_on_regression_is_unsupported() {
        let data = gen_synthetic(2, 2, 3, 1.0, 0).unwrap();
        let spec = ModelSpec::linear_regression(2, 2);
        let w = ParamVector::zeros(spec.param_count());
        assert!(matches!(micro_f1(&spec, &w, &data, &[0]), Err(Error::UnsupportedMetric(_))));
    }

    #[test]
    fn constant_predictor_hits_chance_on_balanced_data() {
        let data = gen_synthetic(10, 2, 10, 1.0, 0).unwrap();
        let spec = ModelSpec::logistic(2, 10);
        let w = ParamVector::zeros(spec.param_count());
        // all-zero logits: ties resolve to class 0
        assert!((micro_f1(&spec, &w, &data, &data.all_indices()).unwrap() - 0.1).abs() < 1e-15);
    }
}
