//! Relabeling strategy: alternate a supervised fit on current instance
//! labels with a per-bag relabeling under the bag constraint.

use rand::seq::SliceRandom;

use super::{
    binary_labels, extents, finish, instance_labels, single_class, svm_params, Hyperparams,
    LearnerModel, Preprocessing, Stacked, TrainedBagModel, TrainingInfo, WeakClassifierSpec,
};
use crate::bagcore::Bag;
use crate::learners::{fit_logistic, fit_svm, sigmoid, Kernel, Matrix, SvmModel};
use crate::{seed, Error, Result};

pub const MAX_RELABEL_ITERATIONS: usize = 20;

/// Max-rule relabeling of one bag. Negative bags are all negative; a
/// positive bag predicted negative gets its most probable instance (lowest
/// index on ties) as the single positive; otherwise predictions at 0.5 are
/// kept.
pub fn mi_relabel(bag_label: bool, probs: &[f64], predicted_bag: bool) -> Vec<bool> {
    if !bag_label {
        return vec![false; probs.len()];
    }
    if !predicted_bag {
        let mut best = 0;
        for (j, &p) in probs.iter().enumerate() {
            if p > probs[best] {
                best = j;
            }
        }
        let mut out = vec![false; probs.len()];
        if !out.is_empty() {
            out[best] = true;
        }
        return out;
    }
    probs.iter().map(|&p| p > 0.5).collect()
}

/// Instance order by descending score, lower index first on ties.
fn ranked(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    idx
}

/// Labels the `c` top-ranked instances positive, choosing the smallest `c`
/// that minimizes `cost(c, order)`.
fn best_count(scores: &[f64], costs: impl Iterator<Item = f64>) -> Vec<bool> {
    let order = ranked(scores);
    let mut best: Option<(f64, usize)> = None;
    for (c, v) in costs.enumerate() {
        if best.is_none_or(|(b, _)| v < b) {
            best = Some((v, c));
        }
    }
    let c = best.map_or(0, |(_, c)| c);
    let mut out = vec![false; scores.len()];
    for &j in &order[..c] {
        out[j] = true;
    }
    out
}

fn xlogy(x: f64, y: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x * y.ln()
    }
}

/// Per-bag maximizer of the binomial bag likelihood times the instance
/// likelihoods. For a fixed positive count the instance term is maximized by
/// the most probable instances, so scanning the count is exact.
pub fn greedy_bag_labeling(extent: f64, probs: &[f64]) -> Vec<bool> {
    let n = probs.len();
    let nz = extent * n as f64;
    let order = ranked(probs);
    // Instance log-likelihood with the first c ranked instances positive,
    // kept as a finite part plus a count of impossible (log 0) terms.
    let log_or_count = |v: f64, finite: &mut f64, zeros: &mut i64, sign: i64| {
        if v > 0.0 {
            *finite += sign as f64 * v.ln();
        } else {
            *zeros += sign;
        }
    };
    let (mut finite, mut zeros) = (0.0, 0i64);
    for &p in probs {
        log_or_count(1.0 - p, &mut finite, &mut zeros, 1);
    }
    let mut neg_loglik = Vec::with_capacity(n + 1);
    for c in 0..=n {
        let q = c as f64 / n as f64;
        let bag = xlogy(nz, q) + xlogy(n as f64 - nz, 1.0 - q);
        let inst = if zeros > 0 { f64::NEG_INFINITY } else { finite };
        neg_loglik.push(-(bag + inst));
        if c < n {
            let p = probs[order[c]];
            log_or_count(1.0 - p, &mut finite, &mut zeros, -1);
            log_or_count(p, &mut finite, &mut zeros, 1);
        }
    }
    if neg_loglik.iter().all(|v| !v.is_finite()) {
        let c = ((nz + 0.5).floor() as usize).min(n);
        let mut out = vec![false; n];
        for &j in &order[..c] {
            out[j] = true;
        }
        return out;
    }
    best_count(probs, neg_loglik.into_iter())
}

/// Per-bag minimizer of `C * sum(hinge) + C2 * |b| * |c/|b| - extent|` over
/// the positive count `c`, with the highest decision values labeled first.
pub fn psvm_bag_labeling(extent: f64, decisions: &[f64], c: f64, c2: f64) -> Vec<bool> {
    let n = decisions.len();
    let order = ranked(decisions);
    let mut hinge: f64 = decisions.iter().map(|&f| (1.0 + f).max(0.0)).sum();
    let mut costs = Vec::with_capacity(n + 1);
    for k in 0..=n {
        costs.push(c * hinge + c2 * n as f64 * (k as f64 / n as f64 - extent).abs());
        if k < n {
            let f = decisions[order[k]];
            hinge += (1.0 - f).max(0.0) - (1.0 + f).max(0.0);
        }
    }
    best_count(decisions, costs.into_iter())
}

enum Inner {
    Logistic,
    Svm { kernel: Kernel, c: f64 },
}

/// One supervised fit on the current instance labels. SVMs are fitted
/// without calibration inside the loop; scores are decision values.
fn fit_inner(inner: &Inner, x: &Matrix, y: &[bool], seed: u64) -> Result<(LearnerModel, Vec<f64>, Vec<f64>)> {
    let n = x.rows();
    if let (Inner::Svm { .. }, Some(p)) = (inner, single_class(y)) {
        let d = if p > 0.5 { 1.0 } else { -1.0 };
        return Ok((LearnerModel::Prior { probability: p }, vec![p; n], vec![d; n]));
    }
    match inner {
        Inner::Logistic => {
            let m = fit_logistic(x, y, None)?;
            let dec = (0..n).map(|i| m.decision(x.row(i))).collect::<Result<Vec<f64>>>()?;
            let probs = dec.iter().map(|&z| sigmoid(z)).collect();
            Ok((LearnerModel::Linear(m), probs, dec))
        }
        Inner::Svm { kernel, c } => {
            let m = fit_svm(x, y, &svm_params(*kernel, *c, seed, false))?;
            let dec = decisions(&m, x)?;
            let probs = dec.iter().map(|&z| sigmoid(z)).collect();
            Ok((LearnerModel::Svm(m), probs, dec))
        }
    }
}

fn decisions(m: &SvmModel, x: &Matrix) -> Result<Vec<f64>> {
    use rayon::prelude::*;
    (0..x.rows()).into_par_iter().map(|i| m.decision(x.row(i))).collect()
}

/// Refits the final SVM with Platt calibration on the labels of the last
/// loop fit.
fn calibrated(inner: &Inner, model: LearnerModel, x: &Matrix, y: &[bool], seed: u64) -> Result<LearnerModel> {
    match (inner, &model) {
        (Inner::Svm { kernel, c }, LearnerModel::Svm(_)) => {
            Ok(LearnerModel::Svm(fit_svm(x, y, &svm_params(*kernel, *c, seed, true))?))
        }
        _ => Ok(model),
    }
}

struct LoopResult {
    model: LearnerModel,
    info: TrainingInfo,
}

fn alternate(
    inner: &Inner,
    stacked: &Stacked,
    mut labels: Vec<bool>,
    seed: u64,
    mut relabel: impl FnMut(usize, &[f64], &[f64]) -> Vec<bool>,
) -> Result<LoopResult> {
    let mut last = None;
    let mut converged = false;
    let mut iterations = 0;
    while iterations < MAX_RELABEL_ITERATIONS {
        iterations += 1;
        let (model, probs, dec) = fit_inner(inner, &stacked.x, &labels, seed)?;
        let mut next = Vec::with_capacity(labels.len());
        for (b, r) in stacked.ranges.iter().enumerate() {
            next.extend(relabel(b, &probs[r.clone()], &dec[r.clone()]));
        }
        let done = next == labels;
        last = Some((model, labels));
        if done {
            converged = true;
            break;
        }
        labels = next;
    }
    let (model, fitted_on) = last.expect("at least one iteration");
    let model = calibrated(inner, model, &stacked.x, &fitted_on, seed)?;
    log::debug!("relabeling stopped after {iterations} fits (converged: {converged})");
    Ok(LoopResult {
        model,
        info: TrainingInfo { iterations, converged },
    })
}

/// milog / misvm: instance labels start at the bag labels and are updated
/// by [`mi_relabel`] until they stop changing or 20 fits have been made.
pub fn train_relabel_mil(spec: &WeakClassifierSpec, bags: &[Bag]) -> Result<TrainedBagModel> {
    let inner = match &spec.hyperparameters {
        Hyperparams::Milog => Inner::Logistic,
        Hyperparams::Misvm { kernel, c } => Inner::Svm { kernel: *kernel, c: *c },
        other => return Err(Error::config(format!("`{}` is not a MIL relabeling method", other.method()))),
    };
    let stacked = Stacked::new(bags)?;
    let z = binary_labels(bags)?;
    let labels = instance_labels(&z, &stacked);
    let result = alternate(&inner, &stacked, labels, spec.seed, |b, probs, _| {
        let predicted = probs.iter().any(|&p| p > 0.5);
        mi_relabel(z[b], probs, predicted)
    })?;
    finish(spec.clone(), Preprocessing::default(), result.model, result.info, bags)
}

/// plog / psvm: instance labels start as a random `round(z |b|)` positives
/// per bag and are updated per bag by [`greedy_bag_labeling`] (plog) or
/// [`psvm_bag_labeling`] (psvm).
pub fn train_relabel_llp(spec: &WeakClassifierSpec, bags: &[Bag]) -> Result<TrainedBagModel> {
    let (inner, costs) = match &spec.hyperparameters {
        Hyperparams::Plog => (Inner::Logistic, None),
        Hyperparams::Psvm { kernel, c, c2 } => (Inner::Svm { kernel: *kernel, c: *c }, Some((*c, *c2))),
        other => return Err(Error::config(format!("`{}` is not an LLP relabeling method", other.method()))),
    };
    let stacked = Stacked::new(bags)?;
    let z = extents(bags)?;
    let mut rng = seed::rng(seed::derive_str(spec.seed, "initial-labels"));
    let mut labels = Vec::with_capacity(stacked.rows());
    for (r, &zi) in stacked.ranges.iter().zip(&z) {
        let n = r.len();
        let positives = ((zi * n as f64 + 0.5).floor() as usize).min(n);
        let mut bag = vec![false; n];
        bag[..positives].iter_mut().for_each(|v| *v = true);
        bag.shuffle(&mut rng);
        labels.extend(bag);
    }
    let result = alternate(&inner, &stacked, labels, spec.seed, |b, probs, dec| match costs {
        None => greedy_bag_labeling(z[b], probs),
        Some((c, c2)) => psvm_bag_labeling(z[b], dec, c, c2),
    })?;
    finish(spec.clone(), Preprocessing::default(), result.model, result.info, bags)
}
