//! The nine bag classifiers, trained from binary (MIL) or proportion (LLP)
//! bag labels, plus instance-threshold fitting and extent prediction.
//!
//! | method | labels | strategy |
//! |--------|--------|----------|
//! | `log`, `svm` | binary | instances inherit the bag label |
//! | `beta` | extent | instances inherit the (squeezed) bag extent |
//! | `milog`, `misvm` | binary | alternate fit and max-rule relabeling |
//! | `plog`, `psvm` | extent | alternate fit and per-bag proportion relabeling |
//! | `cms` | extent | cluster instances, search per-cluster labels |
//! | `lmm` | extent | estimate the mean operator, fit a linear model on it |

mod cms;
mod lmm;
mod relabel;

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bagcore::{theta_mean, threshold_instances, Bag};
use crate::learners::{
    fit_beta_regression, fit_logistic, fit_svm, squeeze_proportions, BetaModel, Kernel,
    LinearModel, Matrix, PcaTransform, ProbabilisticModel, SvmModel, SvmParams,
};
use crate::{seed, Error, Result};

pub use cms::{train_cms, ClusterLabeling, CMS_CMAES_LAMBDA, CMS_CMAES_MAX_ITER, CMS_KMEANS_ITERS};
pub use lmm::{estimate_mean_operator, train_lmm, MeanMapModel, MeanOperator};
pub use relabel::{
    greedy_bag_labeling, mi_relabel, psvm_bag_labeling, train_relabel_llp, train_relabel_mil,
    MAX_RELABEL_ITERATIONS,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Log,
    Svm,
    Milog,
    Misvm,
    Beta,
    Plog,
    Psvm,
    Cms,
    Lmm,
}

impl Method {
    pub const ALL: [Method; 9] = [
        Method::Log,
        Method::Svm,
        Method::Milog,
        Method::Misvm,
        Method::Beta,
        Method::Plog,
        Method::Psvm,
        Method::Cms,
        Method::Lmm,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Log => "log",
            Method::Svm => "svm",
            Method::Milog => "milog",
            Method::Misvm => "misvm",
            Method::Beta => "beta",
            Method::Plog => "plog",
            Method::Psvm => "psvm",
            Method::Cms => "cms",
            Method::Lmm => "lmm",
        }
    }

    /// MIL methods learn from binary bag labels, the rest from extents.
    pub fn uses_binary_labels(self) -> bool {
        matches!(self, Method::Log | Method::Svm | Method::Milog | Method::Misvm)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::config(format!("unknown method `{s}`")))
    }
}

/// Hyperparameters of one classifier; the variant fixes the method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "lowercase")]
pub enum Hyperparams {
    /// `reduce`: decorrelate with PCA and drop components with sd < 1.
    Log { reduce: bool },
    Svm { kernel: Kernel, c: f64 },
    Milog,
    Misvm { kernel: Kernel, c: f64 },
    /// Features are always decorrelated; `reduce` also drops components.
    Beta { reduce: bool },
    Plog,
    Psvm { kernel: Kernel, c: f64, c2: f64 },
    /// Candidate cluster counts; the one with the lowest training error wins.
    Cms { k: Vec<usize> },
    Lmm { lambda: f64, gamma: f64, sigma: f64 },
}

fn positive(v: f64, what: &str) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::config(format!("{what} must be positive, got {v}")))
    }
}

fn check_kernel(kernel: &Kernel) -> Result<()> {
    match kernel {
        Kernel::Rbf { gamma } => positive(*gamma, "rbf gamma"),
        Kernel::Linear => Ok(()),
    }
}

impl Hyperparams {
    pub fn method(&self) -> Method {
        match self {
            Hyperparams::Log { .. } => Method::Log,
            Hyperparams::Svm { .. } => Method::Svm,
            Hyperparams::Milog => Method::Milog,
            Hyperparams::Misvm { .. } => Method::Misvm,
            Hyperparams::Beta { .. } => Method::Beta,
            Hyperparams::Plog => Method::Plog,
            Hyperparams::Psvm { .. } => Method::Psvm,
            Hyperparams::Cms { .. } => Method::Cms,
            Hyperparams::Lmm { .. } => Method::Lmm,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Hyperparams::Svm { kernel, c } | Hyperparams::Misvm { kernel, c } => {
                check_kernel(kernel)?;
                positive(*c, "C")
            }
            Hyperparams::Psvm { kernel, c, c2 } => {
                check_kernel(kernel)?;
                positive(*c, "C")?;
                positive(*c2, "C2")
            }
            Hyperparams::Cms { k } => {
                if k.is_empty() {
                    return Err(Error::config("cms needs at least one cluster count"));
                }
                if k.contains(&0) {
                    return Err(Error::config("cms cluster count must be at least 1"));
                }
                Ok(())
            }
            Hyperparams::Lmm { lambda, gamma, sigma } => {
                if !(*lambda >= 0.0 && lambda.is_finite()) {
                    return Err(Error::config(format!("lambda must be >= 0, got {lambda}")));
                }
                if !(*gamma >= 0.0 && gamma.is_finite()) {
                    return Err(Error::config(format!("gamma must be >= 0, got {gamma}")));
                }
                positive(*sigma, "sigma")
            }
            Hyperparams::Log { .. } | Hyperparams::Beta { .. } | Hyperparams::Milog | Hyperparams::Plog => {
                Ok(())
            }
        }
    }
}

pub const SVM_C_GRID: [f64; 4] = [0.1, 1.0, 10.0, 100.0];
pub const RBF_GAMMA_GRID: [f64; 2] = [0.1, 1.0];
pub const PSVM_C2_GRID: [f64; 4] = [1.0, 10.0, 100.0, 1000.0];
pub const CMS_K_GRID: [usize; 10] = [10, 20, 30, 40, 50, 60, 70, 80, 90, 100];
pub const LMM_LAMBDA_GRID: [f64; 4] = [0.0, 1.0, 10.0, 100.0];
pub const LMM_GAMMA_GRID: [f64; 6] = [1e-5, 1e-4, 1e-3, 0.01, 0.1, 1.0];
pub const LMM_SIGMA_GRID: [f64; 7] = [0.001, 0.01, 0.1, 0.125, 0.25, 0.5, 1.0];

fn svm_kernel_grid() -> Vec<(Kernel, f64)> {
    let mut out: Vec<(Kernel, f64)> = SVM_C_GRID.iter().map(|&c| (Kernel::Linear, c)).collect();
    for &c in &SVM_C_GRID {
        for &gamma in &RBF_GAMMA_GRID {
            out.push((Kernel::Rbf { gamma }, c));
        }
    }
    out
}

/// Default hyperparameter grid for cross-validated selection. cms is a
/// single point whose cluster count is chosen by training error.
pub fn default_grid(method: Method) -> Vec<Hyperparams> {
    match method {
        Method::Log => vec![Hyperparams::Log { reduce: false }, Hyperparams::Log { reduce: true }],
        Method::Beta => vec![Hyperparams::Beta { reduce: false }, Hyperparams::Beta { reduce: true }],
        Method::Svm => svm_kernel_grid()
            .into_iter()
            .map(|(kernel, c)| Hyperparams::Svm { kernel, c })
            .collect(),
        Method::Misvm => svm_kernel_grid()
            .into_iter()
            .map(|(kernel, c)| Hyperparams::Misvm { kernel, c })
            .collect(),
        Method::Psvm => svm_kernel_grid()
            .into_iter()
            .flat_map(|(kernel, c)| PSVM_C2_GRID.iter().map(move |&c2| Hyperparams::Psvm { kernel, c, c2 }))
            .collect(),
        Method::Milog => vec![Hyperparams::Milog],
        Method::Plog => vec![Hyperparams::Plog],
        Method::Cms => vec![Hyperparams::Cms { k: CMS_K_GRID.to_vec() }],
        Method::Lmm => {
            let mut out = Vec::new();
            for &lambda in &LMM_LAMBDA_GRID {
                for &gamma in &LMM_GAMMA_GRID {
                    for &sigma in &LMM_SIGMA_GRID {
                        out.push(Hyperparams::Lmm { lambda, gamma, sigma });
                    }
                }
            }
            out
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeakClassifierSpec {
    pub hyperparameters: Hyperparams,
    pub seed: u64,
}

impl WeakClassifierSpec {
    pub fn new(hyperparameters: Hyperparams, seed: u64) -> Self {
        WeakClassifierSpec { hyperparameters, seed }
    }

    pub fn method(&self) -> Method {
        self.hyperparameters.method()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Preprocessing {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pca: Option<PcaTransform>,
}

impl Preprocessing {
    pub fn apply(&self, x: &Matrix) -> Result<Matrix> {
        match &self.pca {
            Some(p) => p.transform(x),
            None => Ok(x.clone()),
        }
    }

    pub fn apply_row(&self, x: &[f64]) -> Result<Vec<f64>> {
        match &self.pca {
            Some(p) => p.transform_row(x),
            None => Ok(x.to_vec()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LearnerModel {
    Linear(LinearModel),
    Svm(SvmModel),
    Beta(BetaModel),
    Cluster(ClusterLabeling),
    MeanMap(MeanMapModel),
    /// Same probability for every instance; used when the training labels
    /// are all one class.
    Prior { probability: f64 },
}

impl LearnerModel {
    pub fn predict_proba(&self, x: &[f64]) -> Result<f64> {
        match self {
            LearnerModel::Linear(m) => m.predict_proba(x),
            LearnerModel::Svm(m) => m.predict_proba(x),
            LearnerModel::Beta(m) => m.predict_proba(x),
            LearnerModel::Cluster(m) => m.predict_proba(x),
            LearnerModel::MeanMap(m) => m.linear.predict_proba(x),
            LearnerModel::Prior { probability } => Ok(*probability),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingInfo {
    /// Supervised fits performed (1 for non-iterative methods).
    pub iterations: usize,
    pub converged: bool,
}

impl TrainingInfo {
    fn single() -> Self {
        TrainingInfo {
            iterations: 1,
            converged: true,
        }
    }
}

/// A fitted classifier with its preprocessing and instance threshold. This
/// is also the model file layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedBagModel {
    pub classifier: WeakClassifierSpec,
    pub preprocessing: Preprocessing,
    pub params: LearnerModel,
    pub instance_threshold: f64,
    pub training: TrainingInfo,
}

impl TrainedBagModel {
    pub fn method(&self) -> Method {
        self.classifier.method()
    }

    pub fn input_dim(&self) -> Option<usize> {
        if let Some(p) = &self.preprocessing.pca {
            return Some(p.input_dim());
        }
        match &self.params {
            LearnerModel::Linear(m) => Some(m.weights.len()),
            LearnerModel::Svm(m) => Some(m.dim),
            LearnerModel::Beta(m) => Some(m.weights.len()),
            LearnerModel::Cluster(m) => m.model.centroids.first().map(Vec::len),
            LearnerModel::MeanMap(m) => Some(m.linear.weights.len()),
            LearnerModel::Prior { .. } => None,
        }
    }

    pub fn instance_probabilities(&self, bag: &Bag) -> Result<Vec<f64>> {
        if let Some(d) = self.input_dim() {
            if let Some(inst) = bag.instances.iter().find(|i| i.features.len() != d) {
                return Err(Error::domain(format!(
                    "bag `{}` instance `{}` has {} features, model expects {d}",
                    bag.id,
                    inst.id,
                    inst.features.len()
                )));
            }
        }
        bag.instances
            .iter()
            .map(|inst| {
                let z = self.preprocessing.apply_row(&inst.features)?;
                self.params.predict_proba(&z)
            })
            .collect()
    }

    pub fn predict_extent(&self, bag: &Bag) -> Result<f64> {
        let p = self.instance_probabilities(bag)?;
        theta_mean(&threshold_instances(&p, self.instance_threshold))
    }
}

/// Θ_mean of the thresholded instance probabilities of `bag`.
pub fn predict_extent(model: &TrainedBagModel, bag: &Bag) -> Result<f64> {
    model.predict_extent(bag)
}

/// Instance probabilities for many bags, computed in parallel.
pub fn bag_probabilities(model: &TrainedBagModel, bags: &[Bag]) -> Result<Vec<Vec<f64>>> {
    bags.par_iter().map(|b| model.instance_probabilities(b)).collect()
}

pub const THRESHOLD_STEPS: usize = 100;

/// Grid value `k / 100` whose thresholded Θ_mean has the lowest mean
/// absolute error against `extents`; ties go to the smallest threshold.
pub fn threshold_from_probabilities(probs: &[Vec<f64>], extents: &[f64]) -> Result<f64> {
    if probs.len() != extents.len() || probs.is_empty() {
        return Err(Error::domain("need one extent per bag and at least one bag"));
    }
    let sorted: Vec<Vec<f64>> = probs
        .iter()
        .map(|p| {
            let mut s = p.clone();
            s.sort_by(f64::total_cmp);
            s
        })
        .collect();
    let mut best = (f64::INFINITY, 0.0);
    for k in 0..=THRESHOLD_STEPS {
        let t = k as f64 / THRESHOLD_STEPS as f64;
        let mut err = 0.0;
        for (s, z) in sorted.iter().zip(extents) {
            let above = s.len() - s.partition_point(|&p| p <= t);
            err += (above as f64 / s.len() as f64 - z).abs();
        }
        let mae = err / extents.len() as f64;
        if mae < best.0 {
            best = (mae, t);
        }
    }
    Ok(best.1)
}

/// Fits the instance threshold of `model` on labeled training bags.
pub fn fit_instance_threshold(model: &TrainedBagModel, bags: &[Bag]) -> Result<f64> {
    let extents = bags.iter().map(Bag::require_extent).collect::<Result<Vec<f64>>>()?;
    threshold_from_probabilities(&bag_probabilities(model, bags)?, &extents)
}

/// Instances of all bags stacked row-wise, with each bag's row range.
pub(crate) struct Stacked {
    pub x: Matrix,
    pub ranges: Vec<std::ops::Range<usize>>,
}

impl Stacked {
    pub fn new(bags: &[Bag]) -> Result<Self> {
        if bags.is_empty() {
            return Err(Error::domain("no training bags"));
        }
        let d = bags[0].instances[0].features.len();
        let mut data = Vec::new();
        let mut ranges = Vec::with_capacity(bags.len());
        let mut start = 0;
        for bag in bags {
            for inst in &bag.instances {
                if inst.features.len() != d {
                    return Err(Error::domain(format!(
                        "bag `{}`: feature dimension {} != {d}",
                        bag.id,
                        inst.features.len()
                    )));
                }
                data.extend_from_slice(&inst.features);
            }
            ranges.push(start..start + bag.len());
            start += bag.len();
        }
        Ok(Stacked {
            x: Matrix::new(start, d, data)?,
            ranges,
        })
    }

    pub fn rows(&self) -> usize {
        self.x.rows()
    }
}

pub(crate) fn extents(bags: &[Bag]) -> Result<Vec<f64>> {
    bags.iter().map(Bag::require_extent).collect()
}

pub(crate) fn binary_labels(bags: &[Bag]) -> Result<Vec<bool>> {
    bags.iter().map(Bag::require_binary).collect()
}

pub(crate) fn svm_params(kernel: Kernel, c: f64, seed: u64, calibrate: bool) -> SvmParams {
    let mut p = SvmParams::new(kernel, c);
    p.calibrate = calibrate;
    p.seed = seed::derive_str(seed, "svm");
    p
}

/// Attaches the fitted instance threshold.
pub(crate) fn finish(
    classifier: WeakClassifierSpec,
    preprocessing: Preprocessing,
    params: LearnerModel,
    training: TrainingInfo,
    bags: &[Bag],
) -> Result<TrainedBagModel> {
    let mut model = TrainedBagModel {
        classifier,
        preprocessing,
        params,
        instance_threshold: 0.0,
        training,
    };
    model.instance_threshold = fit_instance_threshold(&model, bags)?;
    Ok(model)
}

/// Simple strategy: every instance takes its bag's label. `log` and `svm`
/// use binary bag labels, `beta` the extents squeezed into (0, 1) with the
/// number of bags as sample size.
pub fn train_simple(spec: &WeakClassifierSpec, bags: &[Bag]) -> Result<TrainedBagModel> {
    let stacked = Stacked::new(bags)?;
    let (preprocessing, params) = match &spec.hyperparameters {
        Hyperparams::Log { reduce } => {
            let pre = Preprocessing {
                pca: if *reduce { Some(PcaTransform::fit(&stacked.x, true)?) } else { None },
            };
            let x = pre.apply(&stacked.x)?;
            let y = instance_labels(&binary_labels(bags)?, &stacked);
            (pre, LearnerModel::Linear(fit_logistic(&x, &y, None)?))
        }
        Hyperparams::Svm { kernel, c } => {
            let y = instance_labels(&binary_labels(bags)?, &stacked);
            let params = match single_class(&y) {
                Some(p) => LearnerModel::Prior { probability: p },
                None => LearnerModel::Svm(fit_svm(&stacked.x, &y, &svm_params(*kernel, *c, spec.seed, true))?),
            };
            (Preprocessing::default(), params)
        }
        Hyperparams::Beta { reduce } => {
            let pre = Preprocessing {
                pca: Some(PcaTransform::fit(&stacked.x, *reduce)?),
            };
            let x = pre.apply(&stacked.x)?;
            let squeezed = squeeze_proportions(&extents(bags)?, bags.len())?;
            let y: Vec<f64> = stacked
                .ranges
                .iter()
                .zip(&squeezed)
                .flat_map(|(r, &z)| std::iter::repeat_n(z, r.len()))
                .collect();
            let params = if squeezed.iter().all(|&v| v == squeezed[0]) {
                LearnerModel::Prior { probability: squeezed[0] }
            } else {
                LearnerModel::Beta(fit_beta_regression(&x, &y)?)
            };
            (pre, params)
        }
        other => {
            return Err(Error::config(format!(
                "train_simple does not handle `{}`",
                other.method()
            )))
        }
    };
    finish(spec.clone(), preprocessing, params, TrainingInfo::single(), bags)
}

pub(crate) fn instance_labels(bag_labels: &[bool], stacked: &Stacked) -> Vec<bool> {
    stacked
        .ranges
        .iter()
        .zip(bag_labels)
        .flat_map(|(r, &z)| std::iter::repeat_n(z, r.len()))
        .collect()
}

/// `Some(p)` with p in {0, 1} if all labels agree.
pub(crate) fn single_class(y: &[bool]) -> Option<f64> {
    if y.iter().all(|&v| v) {
        Some(1.0)
    } else if y.iter().all(|&v| !v) {
        Some(0.0)
    } else {
        None
    }
}

/// Trains the classifier named by `spec` and fits its instance threshold.
pub fn train(spec: &WeakClassifierSpec, bags: &[Bag]) -> Result<TrainedBagModel> {
    spec.hyperparameters.validate()?;
    match &spec.hyperparameters {
        Hyperparams::Log { .. } | Hyperparams::Svm { .. } | Hyperparams::Beta { .. } => {
            train_simple(spec, bags)
        }
        Hyperparams::Milog | Hyperparams::Misvm { .. } => train_relabel_mil(spec, bags),
        Hyperparams::Plog | Hyperparams::Psvm { .. } => train_relabel_llp(spec, bags),
        Hyperparams::Cms { k } => train_cms(bags, k, spec.seed),
        Hyperparams::Lmm { lambda, gamma, sigma } => train_lmm(bags, *lambda, *gamma, *sigma, spec.seed),
    }
}

#[cfg(test)]
mod tests;
