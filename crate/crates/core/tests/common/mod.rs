#![allow(dead_code)]

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use trunlearn::dataset::{gen_synthetic, Dataset};
use trunlearn::linalg::{DenseOperator, LinearOperator};
use trunlearn::model::{Activation, LossConfig, ModelSpec, Objective, ParamVector};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

pub fn unit(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    let v = gaussian(rng, d);
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Materialises an operator column by column.
pub fn dense(op: &dyn LinearOperator) -> DMatrix<f64> {
    let d = op.dim();
    let mut m = DMatrix::zeros(d, d);
    for j in 0..d {
        let mut e = vec![0.0; d];
        e[j] = 1.0;
        let col = op.apply(&e);
        for i in 0..d {
            m[(i, j)] = col[i];
        }
    }
    m
}

pub fn to_operator(m: &DMatrix<f64>) -> DenseOperator {
    let n = m.nrows();
    let mut data = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            data.push(m[(i, j)]);
        }
    }
    DenseOperator::new(n, data)
}

/// `AᵀA`-style PSD matrix with a spread of eigenvalues, some near zero.
pub fn random_psd(rng: &mut ChaCha8Rng, d: usize) -> DMatrix<f64> {
    let a = DMatrix::from_fn(d, d, |_, _| rng.sample::<f64, _>(StandardNormal));
    let q = a.qr().q();
    let eig: Vec<f64> = (0..d).map(|i| if i < d / 5 { 1e-3 * rng.random::<f64>() } else { 10.0 * rng.random::<f64>() }).collect();
    &q * DMatrix::from_diagonal(&DVector::from_vec(eig)) * q.transpose()
}

pub fn model_value(h: &DMatrix<f64>, g: &DVector<f64>, p: &DVector<f64>) -> f64 {
    g.dot(p) + 0.5 * p.dot(&(h * p))
}

/// Global minimiser of `gᵀp + ½pᵀHp` over `||p|| <= r` via the eigendecomposition
/// and a bisection on the secular equation (`H` symmetric).
pub fn exact_tr_solution(h: &DMatrix<f64>, g: &DVector<f64>, r: f64) -> DVector<f64> {
    let eig = SymmetricEigen::new(h.clone());
    let q = &eig.eigenvectors;
    let lam = &eig.eigenvalues;
    let gt = q.transpose() * g;
    let lmin = lam.iter().copied().fold(f64::INFINITY, f64::min);
    let step_norm = |s: f64| -> f64 {
        gt.iter().zip(lam.iter()).map(|(gi, li)| (gi / (li + s)).powi(2)).sum::<f64>().sqrt()
    };
    let coords = |s: f64| DVector::from_iterator(gt.len(), gt.iter().zip(lam.iter()).map(|(gi, li)| -gi / (li + s)));
    if lmin > 1e-12 && step_norm(0.0) <= r {
        return q * coords(0.0);
    }
    let mut lo = (-lmin).max(0.0) + 1e-15;
    if step_norm(lo) < r {
        // hard case: fill the remaining length along the bottom eigenvector
        let mut y = coords(lo);
        let k = lam.iter().position(|l| *l == lmin).expect("minimum eigenvalue");
        y[k] += (r * r - y.norm_squared()).max(0.0).sqrt();
        return q * y;
    }
    let mut hi = lo.max(1.0);
    while step_norm(hi) > r {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if step_norm(mid) > r {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    q * coords(hi)
}

/// Relative error of a central-difference directional derivative against `gᵀv`.
pub fn fd_gradient_error(obj: &Objective, w: &[f64], v: &[f64], h: f64) -> f64 {
    let g = obj.gradient(w);
    let wp: Vec<f64> = w.iter().zip(v).map(|(a, b)| a + h * b).collect();
    let wm: Vec<f64> = w.iter().zip(v).map(|(a, b)| a - h * b).collect();
    let fd = (obj.value(&wp) - obj.value(&wm)) / (2.0 * h);
    let an = g.dot(v);
    (fd - an).abs() / an.abs().max(fd.abs()).max(1e-8)
}

/// Relative error of `Hv` against a central difference of gradients.
pub fn fd_hvp_error(obj: &Objective, w: &[f64], v: &[f64], h: f64) -> f64 {
    let hv = obj.hvp(w, v);
    let wp: Vec<f64> = w.iter().zip(v).map(|(a, b)| a + h * b).collect();
    let wm: Vec<f64> = w.iter().zip(v).map(|(a, b)| a - h * b).collect();
    let fd = obj.gradient(&wp).sub(&obj.gradient(&wm)).scaled(1.0 / (2.0 * h));
    fd.distance(&hv) / hv.norm().max(fd.norm()).max(1e-8)
}

/// Standardised Gaussian-feature classification data.
pub fn random_dataset(seed: u64, n: usize, dim: usize, classes: usize) -> Dataset {
    let mut r = rng(seed);
    let x = gaussian(&mut r, n * dim);
    let y: Vec<usize> = (0..n).map(|_| r.random_range(0..classes)).collect();
    Dataset::new(x, y, classes, dim).unwrap()
}

pub fn blobs(seed: u64, classes: usize, dim: usize, per_class: usize) -> Dataset {
    gen_synthetic(classes, dim, per_class, 2.0, seed).unwrap()
}

pub fn random_params(seed: u64, d: usize, scale: f64) -> ParamVector {
    let mut r = rng(seed);
    ParamVector::new(gaussian(&mut r, d).into_iter().map(|x| scale * x).collect())
}

/// The criterion-1 instances: logistic with d = 200 and a tanh MLP slice with d = 1714.
pub fn derivative_instances() -> Vec<(&'static str, ModelSpec, Dataset)> {
    vec![
        ("logistic", ModelSpec::logistic(19, 10), random_dataset(1, 60, 19, 10)),
        ("mlp", ModelSpec::mlp(vec![60, 24, 10], Activation::Tanh), random_dataset(2, 40, 60, 10)),
    ]
}

pub fn loss(lambda: f64) -> LossConfig {
    LossConfig { damping: lambda }
}

/// Retained design `[X, 1]` with orthonormal columns scaled so `[X,1]ᵀ[X,1]/n = I`,
/// plus `extra` arbitrary rows that play the forget set. The retained
/// least-squares Hessian is `(1+λ)I`, so `||g||/L` equals the Newton step length.
pub struct IsotropicInstance {
    pub spec: ModelSpec,
    pub data: Dataset,
    pub retain: Vec<usize>,
    pub w_star: ParamVector,
    pub lambda: f64,
}

pub fn isotropic_instance(seed: u64, n_retain: usize, dim: usize, outputs: usize, extra: usize, lambda: f64) -> IsotropicInstance {
    let mut r = rng(seed);
    let mut m = DMatrix::from_fn(n_retain, dim + 1, |_, _| r.sample::<f64, _>(StandardNormal));
    m.column_mut(0).fill(1.0);
    let q = m.qr().q();
    let scale = (n_retain as f64).sqrt();
    let mut x = Vec::with_capacity((n_retain + extra) * dim);
    for i in 0..n_retain {
        for j in 0..dim {
            x.push(scale * q[(i, j + 1)]);
        }
    }
    x.extend(gaussian(&mut r, extra * dim).into_iter().map(|v| 2.0 * v + 1.0));
    let labels: Vec<usize> = (0..n_retain + extra).map(|i| if i < n_retain { r.random_range(0..outputs) } else { 0 }).collect();
    let data = Dataset::new(x, labels, outputs, dim).unwrap();
    let spec = ModelSpec::linear_regression(dim, outputs);
    let w_star = random_params(seed + 1, spec.param_count(), 0.5);
    IsotropicInstance { spec, data, retain: (0..n_retain).collect(), w_star, lambda }
}

/// Strongly convex logistic instance with biased deletion and both optima.
pub struct ConvexInstance {
    pub spec: ModelSpec,
    pub data: Dataset,
    pub retain: Vec<usize>,
    pub forget: Vec<usize>,
    pub w_star: ParamVector,
    pub w_hat: ParamVector,
    pub lambda: f64,
}

pub fn convex_instance(seed: u64, classes: usize, dim: usize, per_class: usize, deletions: usize, lambda: f64) -> ConvexInstance {
    use trunlearn::dataset::{sample_biased_deletion, BiasSpec};
    use trunlearn::model::{train, TrainConfig};
    let data = blobs(seed, classes, dim, per_class);
    let mut bias = BiasSpec::uniform(deletions, seed + 100);
    bias.bias_map.insert(0, 20.0);
    let split = sample_biased_deletion(&data, &bias).unwrap();
    let spec = ModelSpec::logistic(dim, classes);
    let cfg = TrainConfig { grad_tol: 1e-8, max_iters: 2000, ..TrainConfig::default() };
    let lc = loss(lambda);
    let w_star = train(&spec, &data, &data.all_indices(), &cfg, &lc, None).unwrap();
    let w_hat = train(&spec, &data, &split.retain_indices, &cfg, &lc, None).unwrap();
    assert!(w_hat.grad_norm <= 1e-8, "retraining stopped at {}", w_hat.grad_norm);
    ConvexInstance {
        spec,
        data,
        retain: split.retain_indices,
        forget: split.forget_indices,
        w_star: w_star.params,
        w_hat: w_hat.params,
        lambda,
    }
}
