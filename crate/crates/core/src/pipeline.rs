//! Seeded end-to-end pipeline: data → base model → biased split → retrain →
//! unlearn → certify → evaluate, plus the KL sweep built on top of it.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::Mutex;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::{
    calibrate_deletion_count, gen_synthetic, load_idx, sample_biased_deletion, BiasSpec, Dataset, SplitResult,
};
use crate::error::{invalid, Error, Result};
use crate::eval::{auc_lower_is_member, test_metrics, TimingRecord};
use crate::linalg::CgConfig;
use crate::model::{train, LossConfig, ModelSpec, Objective, ParamVector, TrainConfig, TrainOutcome};
use crate::seed::derive_seed;
use crate::spectral::SpectralConfig;
use crate::trsolver::TrConfig;
use crate::unlearn::{
    certify, damped_newton, newton_one_step, tr_sensitivity, tr_unlearn, zhang_sensitivity_bound, BaselineBoundParams,
    CertParams, ErrorBudget, Method, UnlearnResult, ValueFloor,
};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DataSource {
    Idx { images: PathBuf, labels: PathBuf },
    Synthetic { num_classes: usize, dim: usize, per_class: usize, separation: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataConfig {
    pub source: DataSource,
    /// Fraction held out as the unseen test partition.
    pub test_fraction: f64,
}

/// Deletion pattern; exactly one of `deletion_count` and `target_kl` is set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeletionConfig {
    #[serde(default)]
    pub bias_map: BTreeMap<usize, f64>,
    #[serde(default = "one")]
    pub default_weight: f64,
    #[serde(default)]
    pub deletion_count: Option<usize>,
    #[serde(default)]
    pub target_kl: Option<f64>,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DampedConfig {
    /// Extra damping `λ_N` added on top of `∇²f_R`.
    pub lambda_n: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct MiaConfig {
    /// Subsample forget and unseen sets to the same class composition.
    pub class_matched: bool,
}

/// Grid for [`kl_sweep`]: either explicit deletion counts or KL targets.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepConfig {
    pub deletion_counts: Vec<usize>,
    pub target_kls: Vec<f64>,
    pub seeds: Vec<u64>,
    pub workers: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub schema_version: u32,
    pub seed: u64,
    pub data: DataConfig,
    pub model: ModelSpec,
    pub train: TrainConfig,
    pub loss: LossConfig,
    pub deletion: DeletionConfig,
    pub methods: Vec<Method>,
    #[serde(default)]
    pub tr: TrConfig,
    #[serde(default)]
    pub spectral: SpectralConfig,
    #[serde(default)]
    pub value_floor: ValueFloor,
    pub cert: CertParams,
    #[serde(default)]
    pub budget: ErrorBudget,
    pub baseline: BaselineBoundParams,
    pub damped: DampedConfig,
    #[serde(default)]
    pub newton_cg: CgConfig,
    #[serde(default)]
    pub mia: MiaConfig,
    #[serde(default)]
    pub sweep: SweepConfig,
    /// Excluded from the config hash.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
}

fn at(path: &str, r: Result<()>) -> Result<()> {
    r.map_err(|e| match e {
        Error::InvalidArgument(msg) => Error::InvalidArgument(format!("{path}: {msg}")),
        other => other,
    })
}

impl RunConfig {
    /// Checks every field before any compute; messages carry the field path.
    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(invalid(format!("schema_version: expected {SCHEMA_VERSION}, found {}", self.schema_version)));
        }
        match &self.data.source {
            DataSource::Idx { images, labels } => {
                for (field, p) in [("data.source.images", images), ("data.source.labels", labels)] {
                    if !p.is_file() {
                        return Err(invalid(format!("{field}: {} does not exist", p.display())));
                    }
                }
            }
            DataSource::Synthetic { num_classes, dim, per_class, separation } => {
                if *num_classes == 0 || *dim == 0 || *per_class == 0 || !separation.is_finite() {
                    return Err(invalid("data.source: synthetic counts must be positive"));
                }
            }
        }
        if !(self.data.test_fraction > 0.0 && self.data.test_fraction < 1.0) {
            return Err(invalid("data.test_fraction: must lie in (0, 1)"));
        }
        at("model", self.model.validate())?;
        at("train", self.train.validate())?;
        at("loss", LossConfig::new(self.loss.damping).map(|_| ()))?;
        match (self.deletion.deletion_count, self.deletion.target_kl) {
            (Some(0), _) => return Err(invalid("deletion.deletion_count: must be positive")),
            (Some(_), None) | (None, Some(_)) => {}
            _ => return Err(invalid("deletion: set exactly one of deletion_count and target_kl")),
        }
        if self.deletion.target_kl.is_some_and(|k| !(k > 0.0)) {
            return Err(invalid("deletion.target_kl: must be positive"));
        }
        if self.methods.is_empty() {
            return Err(invalid("methods: select at least one of newton, damped, tr"));
        }
        let mut seen = self.methods.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.methods.len() {
            return Err(invalid("methods: duplicate entries"));
        }
        if self.methods.contains(&Method::Tr) && !(self.loss.damping > 0.0) {
            return Err(invalid("loss.damping: certified TR unlearning needs λ > 0"));
        }
        at("tr", self.tr.validate())?;
        at("spectral", self.spectral.validate())?;
        at("cert", self.cert.validate())?;
        at("budget", self.budget.validate())?;
        at("baseline", self.baseline.validate())?;
        if !(self.damped.lambda_n >= 0.0) || !self.damped.lambda_n.is_finite() {
            return Err(invalid("damped.lambda_n: must be finite and nonnegative"));
        }
        if !(self.newton_cg.rel_tol > 0.0) || self.newton_cg.max_iters == 0 {
            return Err(invalid("newton_cg: rel_tol and max_iters must be positive"));
        }
        if self.sweep.target_kls.iter().any(|k| !(*k > 0.0)) || self.sweep.deletion_counts.contains(&0) {
            return Err(invalid("sweep: grid entries must be positive"));
        }
        Ok(())
    }

    /// sha256 over the canonical JSON of every result-affecting field. The
    /// output directory and worker count do not change results.
    pub fn config_hash(&self) -> String {
        let mut canonical = RunConfig { output_dir: None, ..self.clone() };
        canonical.sweep.workers = 0;
        let json = serde_json::to_vec(&canonical).expect("config serializes");
        hex(&Sha256::digest(&json))
    }

    pub fn seeds(&self) -> Seeds {
        Seeds { master: self.seed }
    }

    fn bias_pattern(&self, deletion_count: usize, seed: u64) -> BiasSpec {
        BiasSpec {
            bias_map: self.deletion.bias_map.clone(),
            default_weight: self.deletion.default_weight,
            deletion_count,
            seed,
        }
    }
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Sub-seeds derived from one master seed.
#[derive(Debug, Clone, Copy)]
pub struct Seeds {
    pub master: u64,
}

impl Seeds {
    pub fn get(&self, label: &str) -> u64 {
        derive_seed(self.master, label)
    }

    pub fn child(&self, label: &str) -> Seeds {
        Seeds { master: self.get(label) }
    }
}

/// Loads or generates the data and splits it into train and unseen test parts.
pub fn load_data(cfg: &RunConfig) -> Result<(Dataset, Dataset)> {
    let seeds = cfg.seeds();
    let full = match &cfg.data.source {
        DataSource::Idx { images, labels } => load_idx(images, labels)?,
        DataSource::Synthetic { num_classes, dim, per_class, separation } => {
            gen_synthetic(*num_classes, *dim, *per_class, *separation, seeds.get("synthetic"))?
        }
    };
    let (train_idx, test_idx) = full.train_test_split(cfg.data.test_fraction, seeds.get("data-split"))?;
    Ok((full.subset(&train_idx)?, full.subset(&test_idx)?))
}

fn train_cfg(cfg: &RunConfig, seeds: &Seeds) -> TrainConfig {
    TrainConfig { seed: seeds.get("init"), ..cfg.train.clone() }
}

/// `w* = A(D)`.
pub fn train_base(cfg: &RunConfig, seeds: &Seeds, data: &Dataset) -> Result<TrainOutcome> {
    train(&cfg.model, data, &data.all_indices(), &train_cfg(cfg, seeds), &cfg.loss, None)
}

/// `ŵ = A(R)`, from scratch with the same initialisation as `w*`.
pub fn retrain(cfg: &RunConfig, seeds: &Seeds, data: &Dataset, split: &SplitResult) -> Result<TrainOutcome> {
    train(&cfg.model, data, &split.retain_indices, &train_cfg(cfg, seeds), &cfg.loss, None)
}

/// Forget/retain split for a deletion count or KL target.
pub fn make_split(
    cfg: &RunConfig,
    data: &Dataset,
    deletion_count: Option<usize>,
    target_kl: Option<f64>,
    seed: u64,
) -> Result<SplitResult> {
    match (deletion_count, target_kl) {
        (Some(m), _) => sample_biased_deletion(data, &cfg.bias_pattern(m, seed)),
        (None, Some(kl)) => calibrate_deletion_count(data, &cfg.bias_pattern(1, seed), kl),
        (None, None) => Err(invalid("split needs a deletion count or a KL target")),
    }
}

pub fn split_from_config(cfg: &RunConfig, seeds: &Seeds, data: &Dataset) -> Result<SplitResult> {
    make_split(cfg, data, cfg.deletion.deletion_count, cfg.deletion.target_kl, seeds.get("split"))
}

/// Runs one unlearning method and certifies it. Wall-clock covers the update,
/// the bound and the noise draw.
pub fn run_method(
    cfg: &RunConfig,
    seeds: &Seeds,
    method: Method,
    data: &Dataset,
    split: &SplitResult,
    w_star: &ParamVector,
) -> Result<UnlearnResult> {
    let start = Instant::now();
    let noise_seed = seeds.get(&format!("noise/{}", method.name()));
    let d = cfg.model.param_count();
    let lambda = cfg.loss.damping;
    let mut result = match method {
        Method::Newton => {
            let w = newton_one_step(&cfg.model, w_star, data, &split.retain_indices, &cfg.loss, &cfg.newton_cg)?;
            let bound = zhang_sensitivity_bound(&cfg.baseline, lambda, d)?;
            certify(method, w, bound, cfg.cert, noise_seed)?
        }
        Method::Damped => {
            let lambda_n = cfg.damped.lambda_n;
            let w = damped_newton(&cfg.model, w_star, data, &split.retain_indices, &cfg.loss, lambda_n, &cfg.newton_cg)?;
            let bound = zhang_sensitivity_bound(&cfg.baseline, lambda + lambda_n, d)?;
            certify(method, w, bound, cfg.cert, noise_seed)?
        }
        Method::Tr => {
            let spectral = SpectralConfig { seed: seeds.get("spectral"), ..cfg.spectral.clone() };
            let run = tr_unlearn(
                &cfg.model,
                w_star,
                data,
                &split.retain_indices,
                &cfg.loss,
                &cfg.tr,
                &spectral,
                &cfg.budget,
            )?;
            let bound = tr_sensitivity(&run, &cfg.tr, cfg.value_floor)?;
            let mut r = certify(method, run.w, bound, cfg.cert, noise_seed)?;
            r.trace = run.trace;
            r.stalled = run.stalled;
            r
        }
    };
    result.seconds = start.elapsed().as_secs_f64();
    Ok(result)
}

/// Forget and unseen index sets for U-MIA. With class matching both sides are
/// subsampled to a shared per-class count, so the attack cannot key on labels.
pub fn mia_sets(
    train: &Dataset,
    forget: &[usize],
    test: &Dataset,
    test_idx: &[usize],
    class_matched: bool,
    seed: u64,
) -> (Vec<usize>, Vec<usize>) {
    if !class_matched {
        return (forget.to_vec(), test_idx.to_vec());
    }
    let k = train.num_classes().max(test.num_classes());
    let mut by_class_f: Vec<Vec<usize>> = vec![Vec::new(); k];
    let mut by_class_u: Vec<Vec<usize>> = vec![Vec::new(); k];
    for &i in forget {
        by_class_f[train.labels()[i]].push(i);
    }
    for &i in test_idx {
        by_class_u[test.labels()[i]].push(i);
    }
    let scale = (0..k)
        .filter(|&c| !by_class_f[c].is_empty())
        .map(|c| by_class_u[c].len() as f64 / by_class_f[c].len() as f64)
        .fold(1.0f64, f64::min);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut f_out = Vec::new();
    let mut u_out = Vec::new();
    for c in 0..k {
        let take = (scale * by_class_f[c].len() as f64).floor() as usize;
        by_class_f[c].shuffle(&mut rng);
        by_class_u[c].shuffle(&mut rng);
        f_out.extend_from_slice(&by_class_f[c][..take]);
        u_out.extend_from_slice(&by_class_u[c][..take]);
    }
    f_out.sort_unstable();
    u_out.sort_unstable();
    (f_out, u_out)
}

/// U-MIA AUC of `w` on prepared forget/unseen sets; `NaN` when a set is empty.
pub fn mia_auc(spec: &ModelSpec, w: &ParamVector, train: &Dataset, f: &[usize], test: &Dataset, u: &[usize]) -> f64 {
    if f.is_empty() || u.is_empty() {
        return f64::NAN;
    }
    let zero = LossConfig { damping: 0.0 };
    let scores = |d: &Dataset, idx: &[usize]| Objective::new(spec, d, idx, &zero).map(|o| o.example_losses(w));
    match (scores(train, f), scores(test, u)) {
        (Ok(a), Ok(b)) => auc_lower_is_member(&a, &b).unwrap_or(f64::NAN),
        _ => f64::NAN,
    }
}

/// U-MIA between two seeded random halves of one population.
pub fn control_mia_auc(spec: &ModelSpec, w: &ParamVector, data: &Dataset, seed: u64) -> f64 {
    let mut idx = data.all_indices();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (a, b) = idx.split_at(idx.len() / 2);
    mia_auc(spec, w, data, a, data, b)
}

/// Per-method outcome at one grid point; failed methods keep `NaN` metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodOutcome {
    pub method: Method,
    pub error: Option<String>,
    pub sigma: f64,
    pub bound: f64,
    /// `||w̃_pre_noise − ŵ||`.
    pub distance: f64,
    pub pre_noise_f1: f64,
    pub f1: f64,
    pub loss: f64,
    pub delta_f1: f64,
    pub delta_loss: f64,
    pub mia_auc: f64,
    pub delta_mia: f64,
    pub stalled: bool,
}

impl MethodOutcome {
    fn failed(method: Method, error: String) -> Self {
        let nan = f64::NAN;
        Self {
            method,
            error: Some(error),
            sigma: nan,
            bound: nan,
            distance: nan,
            pre_noise_f1: nan,
            f1: nan,
            loss: nan,
            delta_f1: nan,
            delta_loss: nan,
            mia_auc: nan,
            delta_mia: nan,
            stalled: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub point: usize,
    pub seed: u64,
    pub deletion_count: usize,
    pub achieved_kl: f64,
    pub retrain_f1: f64,
    pub retrain_loss: f64,
    pub retrain_mia_auc: f64,
    /// Attack AUC between two random halves of the unseen set; should sit near 0.5.
    pub control_mia_auc: f64,
    pub methods: Vec<MethodOutcome>,
}

/// One evaluated grid point; timings are kept apart so rows stay deterministic.
pub struct PointResult {
    pub row: SweepRow,
    pub timings: Vec<TimingRecord>,
    pub results: Vec<UnlearnResult>,
    pub retrained: ParamVector,
    pub split: SplitResult,
}

/// Evaluates one grid point: split, retrain, every method, metrics.
#[allow(clippy::too_many_arguments)]
pub fn run_point(
    cfg: &RunConfig,
    seeds: &Seeds,
    train_data: &Dataset,
    test_data: &Dataset,
    w_star: &ParamVector,
    split: SplitResult,
    point: usize,
    replicate: u64,
) -> Result<PointResult> {
    let start = Instant::now();
    let w_hat = retrain(cfg, seeds, train_data, &split)?.params;
    let retrain_seconds = start.elapsed().as_secs_f64();
    let test_idx = test_data.all_indices();
    let (retrain_f1, retrain_loss) = test_metrics(&cfg.model, &w_hat, test_data, &test_idx)?;
    let (mia_f, mia_u) =
        mia_sets(train_data, &split.forget_indices, test_data, &test_idx, cfg.mia.class_matched, seeds.get("mia"));
    let retrain_auc = mia_auc(&cfg.model, &w_hat, train_data, &mia_f, test_data, &mia_u);
    let control_auc = control_mia_auc(&cfg.model, &w_hat, test_data, seeds.get("mia-control"));

    let mut outcomes = Vec::new();
    let mut timings = Vec::new();
    let mut results = Vec::new();
    for &method in &cfg.methods {
        let outcome = match run_method(cfg, seeds, method, train_data, &split, w_star) {
            Ok(r) => {
                let evaluated = (|| -> Result<MethodOutcome> {
                    let (f1, loss) = test_metrics(&cfg.model, &r.w_certified, test_data, &test_idx)?;
                    let (pre_f1, _) = test_metrics(&cfg.model, &r.w_pre_noise, test_data, &test_idx)?;
                    let auc = mia_auc(&cfg.model, &r.w_certified, train_data, &mia_f, test_data, &mia_u);
                    Ok(MethodOutcome {
                        method,
                        error: None,
                        sigma: r.sigma,
                        bound: r.bound.delta,
                        distance: r.w_pre_noise.distance(&w_hat),
                        pre_noise_f1: pre_f1,
                        f1,
                        loss,
                        delta_f1: retrain_f1 - f1,
                        delta_loss: loss - retrain_loss,
                        mia_auc: auc,
                        delta_mia: (retrain_auc - auc).abs(),
                        stalled: r.stalled,
                    })
                })();
                timings.push(TimingRecord {
                    run: format!("{point}/{replicate}"),
                    method,
                    kl: split.achieved_kl,
                    unlearn_seconds: r.seconds,
                    retrain_seconds,
                });
                let o = evaluated?;
                results.push(r);
                o
            }
            Err(e) => MethodOutcome::failed(method, e.to_string()),
        };
        outcomes.push(outcome);
    }
    Ok(PointResult {
        row: SweepRow {
            point,
            seed: replicate,
            deletion_count: split.forget_indices.len(),
            achieved_kl: split.achieved_kl,
            retrain_f1,
            retrain_loss,
            retrain_mia_auc: retrain_auc,
            control_mia_auc: control_auc,
            methods: outcomes,
        },
        timings,
        results,
        retrained: w_hat,
        split,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesPoint {
    pub point: usize,
    pub method: Method,
    pub kl_mean: f64,
    pub delta_f1_min: f64,
    pub delta_f1_mean: f64,
    pub delta_f1_max: f64,
    pub failures: usize,
}

#[derive(Debug, Clone, Default)]
pub struct SweepOutput {
    pub rows: Vec<SweepRow>,
    pub timings: Vec<TimingRecord>,
}

impl SweepOutput {
    /// Min/mean/max ΔF1 across seeds per grid point and method.
    pub fn summary(&self) -> Vec<SeriesPoint> {
        let mut out = Vec::new();
        let points: std::collections::BTreeSet<usize> = self.rows.iter().map(|r| r.point).collect();
        for p in points {
            let rows: Vec<&SweepRow> = self.rows.iter().filter(|r| r.point == p).collect();
            let kl_mean = rows.iter().map(|r| r.achieved_kl).sum::<f64>() / rows.len() as f64;
            let methods: Vec<Method> = rows[0].methods.iter().map(|m| m.method).collect();
            for method in methods {
                let vals: Vec<f64> = rows
                    .iter()
                    .filter_map(|r| r.methods.iter().find(|m| m.method == method))
                    .map(|m| m.delta_f1)
                    .collect();
                let ok: Vec<f64> = vals.iter().copied().filter(|v| v.is_finite()).collect();
                let (min, mean, max) = if ok.is_empty() {
                    (f64::NAN, f64::NAN, f64::NAN)
                } else {
                    (
                        ok.iter().copied().fold(f64::INFINITY, f64::min),
                        ok.iter().sum::<f64>() / ok.len() as f64,
                        ok.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                    )
                };
                out.push(SeriesPoint {
                    point: p,
                    method,
                    kl_mean,
                    delta_f1_min: min,
                    delta_f1_mean: mean,
                    delta_f1_max: max,
                    failures: vals.len() - ok.len(),
                });
            }
        }
        out
    }

    /// One row per grid point per seed; methods become column groups.
    pub fn to_csv(&self) -> String {
        let methods: Vec<Method> = self.rows.first().map(|r| r.methods.iter().map(|m| m.method).collect()).unwrap_or_default();
        let mut header = vec![
            "point".to_string(),
            "seed".into(),
            "deletion_count".into(),
            "achieved_kl".into(),
            "retrain_f1".into(),
            "retrain_loss".into(),
            "retrain_mia_auc".into(),
            "control_mia_auc".into(),
        ];
        for m in &methods {
            for col in [
                "status", "sigma", "bound", "distance", "pre_noise_f1", "f1", "loss", "delta_f1", "delta_loss", "mia_auc",
                "delta_mia",
            ] {
                header.push(format!("{}_{col}", m.name()));
            }
        }
        let mut out = header.join(",");
        out.push('\n');
        for r in &self.rows {
            let mut cells = vec![
                r.point.to_string(),
                r.seed.to_string(),
                r.deletion_count.to_string(),
                r.achieved_kl.to_string(),
                r.retrain_f1.to_string(),
                r.retrain_loss.to_string(),
                r.retrain_mia_auc.to_string(),
                r.control_mia_auc.to_string(),
            ];
            for m in &r.methods {
                let status = match (&m.error, m.stalled) {
                    (Some(_), _) => "failed",
                    (None, true) => "stalled",
                    (None, false) => "ok",
                };
                cells.push(status.to_string());
                for v in [
                    m.sigma,
                    m.bound,
                    m.distance,
                    m.pre_noise_f1,
                    m.f1,
                    m.loss,
                    m.delta_f1,
                    m.delta_loss,
                    m.mia_auc,
                    m.delta_mia,
                ] {
                    cells.push(v.to_string());
                }
            }
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }
}

/// Grid points as `(deletion_count, target_kl)` pairs.
fn grid(cfg: &RunConfig) -> Vec<(Option<usize>, Option<f64>)> {
    let mut g: Vec<(Option<usize>, Option<f64>)> = cfg.sweep.deletion_counts.iter().map(|&m| (Some(m), None)).collect();
    g.extend(cfg.sweep.target_kls.iter().map(|&k| (None, Some(k))));
    if g.is_empty() {
        g.push((cfg.deletion.deletion_count, cfg.deletion.target_kl));
    }
    g
}

/// KL sweep: for each seed a base model is trained once; each grid point gets
/// its own split, retrained gold standard and unlearning runs. The rows are a
/// pure function of the config; timings are returned separately.
pub fn kl_sweep(cfg: &RunConfig, train_data: &Dataset, test_data: &Dataset) -> Result<SweepOutput> {
    cfg.validate()?;
    let seeds_list = if cfg.sweep.seeds.is_empty() { vec![0] } else { cfg.sweep.seeds.clone() };
    let points = grid(cfg);
    let replicates: Vec<(u64, Seeds)> =
        seeds_list.iter().map(|&s| (s, cfg.seeds().child(&format!("replicate/{s}")))).collect();

    let mut bases = Vec::new();
    for (_, seeds) in &replicates {
        bases.push(train_base(cfg, seeds, train_data)?.params);
    }

    let tasks: Vec<(usize, usize)> =
        (0..points.len()).flat_map(|p| (0..replicates.len()).map(move |r| (p, r))).collect();
    let workers = cfg.sweep.workers.max(1).min(tasks.len().max(1));
    let next = Mutex::new(0usize);
    let collected: Mutex<Vec<(usize, usize, Result<PointResult>)>> = Mutex::new(Vec::new());
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = {
                    let mut n = next.lock().expect("task counter");
                    let i = *n;
                    *n += 1;
                    i
                };
                let Some(&(p, r)) = tasks.get(i) else { break };
                let (replicate, seeds) = &replicates[r];
                let point_seeds = seeds.child(&format!("point/{p}"));
                let (count, kl) = points[p];
                let res = make_split(cfg, train_data, count, kl, point_seeds.get("split")).and_then(|split| {
                    run_point(cfg, &point_seeds, train_data, test_data, &bases[r], split, p, *replicate)
                });
                collected.lock().expect("results").push((p, r, res));
            });
        }
    });
    let mut collected = collected.into_inner().expect("results");
    collected.sort_by_key(|(p, r, _)| (*p, *r));
    let mut out = SweepOutput::default();
    for (_, _, res) in collected {
        let pr = res?;
        out.rows.push(pr.row);
        out.timings.extend(pr.timings);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn tiny_config() -> RunConfig {
        RunConfig {
            schema_version: SCHEMA_VERSION,
            seed: 11,
            data: DataConfig {
                source: DataSource::Synthetic { num_classes: 3, dim: 4, per_class: 40, separation: 3.0 },
                test_fraction: 0.25,
            },
            model: ModelSpec::logistic(4, 3),
            train: TrainConfig { grad_tol: 1e-8, max_iters: 500, ..TrainConfig::default() },
            loss: LossConfig { damping: 0.1 },
            deletion: DeletionConfig {
                bias_map: [(0, 20.0)].into_iter().collect(),
                default_weight: 1.0,
                deletion_count: Some(15),
                target_kl: None,
            },
            methods: vec![Method::Newton, Method::Damped, Method::Tr],
            tr: TrConfig::default(),
            spectral: SpectralConfig::default(),
            value_floor: ValueFloor::StrongConvexity,
            cert: CertParams { epsilon: 1.0, delta: 1e-3 },
            budget: ErrorBudget::default(),
            baseline: BaselineBoundParams { c: 10.0, g: 1.0, l: 1.0, m: 1.0, lambda_min: 0.0, d: None, rho_b: 1.0 },
            damped: DampedConfig { lambda_n: 1.0 },
            newton_cg: CgConfig::default(),
            mia: MiaConfig { class_matched: true },
            sweep: SweepConfig { deletion_counts: vec![5, 15], target_kls: vec![], seeds: vec![1, 2], workers: 2 },
            output_dir: None,
        }
    }

    #[test]
    fn validation_names_the_field() {
        let mut cfg = tiny_config();
        cfg.tr.tau = 2.0;
        let msg = cfg.validate().unwrap_err().to_string();
        assert!(msg.contains("tr:"), "{msg}");
        let mut cfg = tiny_config();
        cfg.deletion.target_kl = Some(0.1);
        assert!(cfg.validate().unwrap_err().to_string().contains("deletion"));
    }

    #[test]
    fn hash_ignores_output_dir_only() {
        let a = tiny_config();
        let b = RunConfig { output_dir: Some("/tmp/x".into()), ..a.clone() };
        assert_eq!(a.config_hash(), b.config_hash());
        let c = RunConfig { seed: 12, ..a.clone() };
        assert_ne!(a.config_hash(), c.config_hash());
    }

    #[test]
    fn sweep_is_deterministic_across_worker_counts() {
        let cfg = tiny_config();
        let (train, test) = load_data(&cfg).unwrap();
        let a = kl_sweep(&cfg, &train, &test).unwrap();
        let single = RunConfig { sweep: SweepConfig { workers: 1, ..cfg.sweep.clone() }, ..cfg.clone() };
        let b = kl_sweep(&single, &train, &test).unwrap();
        assert_eq!(a.rows.len(), 4);
        assert_eq!(a.to_csv(), b.to_csv());
        assert_eq!(a.summary().len(), 2 * 3);
    }

    #[test]
    fn class_matched_mia_sets_share_composition() {
        let labels_train: Vec<usize> = (0..60).map(|i| i % 3).collect();
        let train = Dataset::new(vec![0.0; 60], labels_train, 3, 1).unwrap();
        let test = Dataset::new(vec![0.0; 12], (0..12).map(|i| i % 3).collect(), 3, 1).unwrap();
        let forget: Vec<usize> = (0..60).filter(|i| i % 3 == 0 || *i < 6).collect();
        let (f, u) = mia_sets(&train, &forget, &test, &test.all_indices(), true, 3);
        assert_eq!(f.len(), u.len());
        assert_eq!(train.class_counts(&f), test.class_counts(&u));
    }
}
