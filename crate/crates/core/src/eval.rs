//! Utility deltas against the retrained model, loss-threshold U-MIA, Taylor
//! remainder diagnostics and timing summaries.

use std::collections::BTreeMap;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{invalid, Result};
use crate::model::{micro_f1, LossConfig, ModelSpec, Objective, ParamVector};
use crate::unlearn::Method;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtilityReport {
    pub retrain_f1: f64,
    pub retrain_loss: f64,
    pub unlearn_f1: f64,
    pub unlearn_loss: f64,
    /// `retrain_f1 − unlearn_f1`.
    pub delta_f1: f64,
    /// `unlearn_loss − retrain_loss`.
    pub delta_loss: f64,
    /// `delta_f1 < 0`: the unlearned model beats the retrained one, a sign of too little noise.
    pub under_noise: bool,
}

/// Full per-method evaluation record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    #[serde(flatten)]
    pub utility: UtilityReport,
    pub achieved_kl: f64,
    pub mia_auc_retrain: f64,
    pub mia_auc_unlearn: f64,
    /// `|auc_retrain − auc_unlearn|`.
    pub delta_mia: f64,
}

/// Mean undamped loss and micro F1 of `w` on `subset`.
pub fn test_metrics(spec: &ModelSpec, w: &ParamVector, data: &Dataset, subset: &[usize]) -> Result<(f64, f64)> {
    let f1 = micro_f1(spec, w, data, subset)?;
    let loss = Objective::new(spec, data, subset, &LossConfig { damping: 0.0 })?.data_loss(w);
    Ok((f1, loss))
}

pub fn utility_report(
    spec: &ModelSpec,
    w_unlearned: &ParamVector,
    w_retrained: &ParamVector,
    test: &Dataset,
    test_idx: &[usize],
) -> Result<UtilityReport> {
    if w_unlearned.len() != w_retrained.len() || w_retrained.len() != spec.param_count() {
        return Err(invalid("unlearned and retrained models must share the model spec"));
    }
    let (retrain_f1, retrain_loss) = test_metrics(spec, w_retrained, test, test_idx)?;
    let (unlearn_f1, unlearn_loss) = test_metrics(spec, w_unlearned, test, test_idx)?;
    let delta_f1 = retrain_f1 - unlearn_f1;
    Ok(UtilityReport {
        retrain_f1,
        retrain_loss,
        unlearn_f1,
        unlearn_loss,
        delta_f1,
        delta_loss: unlearn_loss - retrain_loss,
        under_noise: delta_f1 < 0.0,
    })
}

/// Midranks (1-based) of `values`, ties sharing their average rank.
pub fn midranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = rank;
        }
        i = j + 1;
    }
    ranks
}

/// AUC of "lower score ⇒ member" by the rank-sum statistic with midranks.
pub fn auc_lower_is_member(member_scores: &[f64], nonmember_scores: &[f64]) -> Result<f64> {
    if member_scores.is_empty() || nonmember_scores.is_empty() {
        return Err(invalid("AUC needs non-empty member and non-member sets"));
    }
    let all: Vec<f64> = member_scores.iter().chain(nonmember_scores).copied().collect();
    if all.iter().any(|s| s.is_nan()) {
        return Err(invalid("AUC scores contain NaN"));
    }
    let ranks = midranks(&all);
    let n_m = member_scores.len() as f64;
    let n_u = nonmember_scores.len() as f64;
    let r_u: f64 = ranks[member_scores.len()..].iter().sum();
    Ok((r_u - n_u * (n_u + 1.0) / 2.0) / (n_m * n_u))
}

/// Loss-threshold U-MIA: per-example loss separates the forget set
/// (`forget`, `forget_idx`) from unseen held-out data (`unseen`, `unseen_idx`).
pub fn u_mia_auc(
    spec: &ModelSpec,
    w: &ParamVector,
    forget: &Dataset,
    forget_idx: &[usize],
    unseen: &Dataset,
    unseen_idx: &[usize],
) -> Result<f64> {
    if forget_idx.is_empty() || unseen_idx.is_empty() {
        return Err(invalid("U-MIA needs non-empty forget and unseen sets"));
    }
    if std::ptr::eq(forget, unseen) && forget_idx.iter().any(|i| unseen_idx.contains(i)) {
        return Err(invalid("forget and unseen sets overlap"));
    }
    let zero = LossConfig { damping: 0.0 };
    let member = Objective::new(spec, forget, forget_idx, &zero)?.example_losses(w);
    let nonmember = Objective::new(spec, unseen, unseen_idx, &zero)?.example_losses(w);
    auc_lower_is_member(&member, &nonmember)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaylorReport {
    /// `F_R(ŵ) − [F_R(w*) + <∇F_R(w*), Δ> + ½<Δ, H_R(w*) Δ>]`.
    pub r3: f64,
    /// `||∇F_R(ŵ) − [∇F_R(w*) + H_R(w*) Δ]||`.
    pub r2_norm: f64,
    /// `||ŵ − w*||`.
    pub delta_norm: f64,
}

/// Measures how far the retained objective is from its second-order expansion at `w*`.
pub fn taylor_remainder_diagnostic(
    spec: &ModelSpec,
    w_star: &ParamVector,
    w_hat: &ParamVector,
    data: &Dataset,
    retain: &[usize],
    loss_cfg: &LossConfig,
) -> Result<TaylorReport> {
    if w_star.len() != w_hat.len() {
        return Err(invalid("parameter vectors differ in length"));
    }
    let obj = Objective::new(spec, data, retain, loss_cfg)?;
    let delta = w_hat.sub(w_star);
    let (f_star, g_star) = obj.value_and_gradient(w_star);
    let (f_hat, g_hat) = obj.value_and_gradient(w_hat);
    let h_delta = obj.hvp(w_star, &delta);
    let r3 = f_hat - (f_star + g_star.dot(&delta) + 0.5 * delta.dot(&h_delta));
    let mut r2 = g_hat.sub(&g_star);
    r2.axpy(-1.0, &h_delta);
    Ok(TaylorReport { r3, r2_norm: r2.norm(), delta_norm: delta.norm() })
}

/// Spearman rank correlation with midranks; `None` when either side is constant.
pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let rx = midranks(x);
    let ry = midranks(y);
    let n = x.len() as f64;
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some(sxy / (sxx * syy).sqrt())
}

/// Wall-clock record of one unlearning run and its matched retraining.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingRecord {
    pub run: String,
    pub method: Method,
    pub kl: f64,
    pub unlearn_seconds: f64,
    pub retrain_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingRow {
    pub method: Method,
    pub runs: usize,
    pub unlearn_min: f64,
    pub unlearn_median: f64,
    pub unlearn_max: f64,
    pub retrain_median: f64,
    /// Fraction of runs with unlearn time below the matched retrain time.
    pub faster_than_retrain: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TimingTable {
    pub rows: Vec<TimingRow>,
}

pub fn median(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Aggregates timing records per method, in method order.
pub fn timing_report(runs: &[TimingRecord]) -> TimingTable {
    let mut by_method: BTreeMap<Method, Vec<&TimingRecord>> = BTreeMap::new();
    for r in runs {
        by_method.entry(r.method).or_default().push(r);
    }
    let rows = by_method
        .into_iter()
        .map(|(method, recs)| {
            let mut unlearn: Vec<f64> = recs.iter().map(|r| r.unlearn_seconds).collect();
            let mut retrain: Vec<f64> = recs.iter().map(|r| r.retrain_seconds).collect();
            let faster = recs.iter().filter(|r| r.unlearn_seconds < r.retrain_seconds).count();
            let n = recs.len();
            TimingRow {
                method,
                runs: n,
                unlearn_min: unlearn.iter().copied().fold(f64::INFINITY, f64::min),
                unlearn_max: unlearn.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                unlearn_median: median(&mut unlearn),
                retrain_median: median(&mut retrain),
                faster_than_retrain: faster as f64 / n as f64,
            }
        })
        .collect();
    TimingTable { rows }
}

/// Fraction of matched runs (same `run` id) where `fast` took less time than `slow`.
pub fn ordering_fraction(runs: &[TimingRecord], fast: Method, slow: Method) -> Option<f64> {
    let mut pairs = 0;
    let mut held = 0;
    for a in runs.iter().filter(|r| r.method == fast) {
        if let Some(b) = runs.iter().find(|r| r.method == slow && r.run == a.run) {
            pairs += 1;
            if a.unlearn_seconds < b.unlearn_seconds {
                held += 1;
            }
        }
    }
    (pairs > 0).then(|| held as f64 / pairs as f64)
}

/// Min and median wall-clock seconds of `reps` runs of `f`.
pub fn time_repeated<T>(reps: usize, mut f: impl FnMut() -> T) -> (f64, f64) {
    let mut secs: Vec<f64> = (0..reps.max(1))
        .map(|_| {
            let start = Instant::now();
            std::hint::black_box(f());
            start.elapsed().as_secs_f64()
        })
        .collect();
    let min = secs.iter().copied().fold(f64::INFINITY, f64::min);
    (min, median(&mut secs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::gen_synthetic;

    #[test]
    fn auc_hand_fixture() {
        assert_eq!(auc_lower_is_member(&[0.1, 0.2], &[0.3, 0.4]).unwrap(), 1.0);
        assert_eq!(auc_lower_is_member(&[0.3, 0.4], &[0.1, 0.2]).unwrap(), 0.0);
        // every score tied: midranks give 0.5
        assert_eq!(auc_lower_is_member(&[1.0, 1.0], &[1.0]).unwrap(), 0.5);
        // one member ties one non-member: (1 + 1 + 0.5 + 1) / 4
        assert_eq!(auc_lower_is_member(&[0.1, 0.3], &[0.3, 0.5]).unwrap(), 0.875);
        assert!(auc_lower_is_member(&[], &[1.0]).is_err());
    }

    #[test]
    fn midrank_ties() {
        assert_eq!(midranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
    }

    #[test]
    fn identical_models_have_zero_deltas() {
        let data = gen_synthetic(3, 2, 10, 2.0, 1).unwrap();
        let spec = ModelSpec::logistic(2, 3);
        let w = crate::model::init_params(&spec, 4).unwrap();
        let r = utility_report(&spec, &w, &w, &data, &data.all_indices()).unwrap();
        assert_eq!(r.delta_f1, 0.0);
        assert_eq!(r.delta_loss, 0.0);
        assert!(!r.under_noise);
        let short = ParamVector::zeros(3);
        assert!(utility_report(&spec, &short, &w, &data, &data.all_indices()).is_err());
    }

    #[test]
    fn spearman_basics() {
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]), Some(1.0));
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]), Some(-1.0));
        assert_eq!(spearman(&[1.0, 2.0], &[1.0, 1.0]), None);
    }

    #[test]
    fn timing_table() {
        assert!(timing_report(&[]).rows.is_empty());
        let rec = |run: &str, method, u| TimingRecord { run: run.into(), method, kl: 0.1, unlearn_seconds: u, retrain_seconds: 2.0 };
        let runs = vec![rec("a", Method::Tr, 1.0), rec("a", Method::Damped, 0.5), rec("b", Method::Tr, 3.0), rec("b", Method::Damped, 0.2)];
        let t = timing_report(&runs);
        assert_eq!(t.rows.len(), 2);
        let tr = t.rows.iter().find(|r| r.method == Method::Tr).unwrap();
        assert_eq!(tr.faster_than_retrain, 0.5);
        assert_eq!(tr.unlearn_median, 2.0);
        assert_eq!(ordering_fraction(&runs, Method::Damped, Method::Tr), Some(1.0));
    }
}
