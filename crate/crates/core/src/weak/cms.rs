//! Cluster model selection: cluster all training instances, then search a
//! binary label per cluster so that the induced bag proportions match the
//! bag extents.

use serde::{Deserialize, Serialize};

use super::{extents, finish, Hyperparams, LearnerModel, Preprocessing, Stacked, TrainedBagModel, TrainingInfo, WeakClassifierSpec};
use crate::bagcore::Bag;
use crate::learners::{cmaes_minimize, kmeans, CmaEsConfig, KMeansInit, KMeansModel};
use crate::{seed, Error, Result};

pub const CMS_KMEANS_ITERS: usize = 25;
pub const CMS_CMAES_LAMBDA: usize = 13;
pub const CMS_CMAES_MAX_ITER: usize = 1000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterLabeling {
    pub model: KMeansModel,
    pub labels: Vec<bool>,
    /// Training bag-extent MAE for every cluster count tried, in grid order.
    pub training_errors: Vec<(usize, f64)>,
}

impl ClusterLabeling {
    pub fn k(&self) -> usize {
        self.model.k()
    }

    pub fn predict_proba(&self, x: &[f64]) -> Result<f64> {
        Ok(if self.labels[self.model.assign(x)?] { 1.0 } else { 0.0 })
    }
}

/// Per-bag cluster counts and the mean absolute extent error of a labeling.
struct Counts {
    counts: Vec<Vec<u32>>,
    sizes: Vec<f64>,
    extents: Vec<f64>,
}

impl Counts {
    fn error(&self, positive: impl Fn(usize) -> bool) -> f64 {
        let mut err = 0.0;
        for ((row, &n), &z) in self.counts.iter().zip(&self.sizes).zip(&self.extents) {
            let pos: u32 = row.iter().enumerate().filter(|&(c, _)| positive(c)).map(|(_, &v)| v).sum();
            err += (pos as f64 / n - z).abs();
        }
        err / self.extents.len() as f64
    }
}

/// Trains cms for every `k` in `k_grid` (values above the instance count are
/// skipped) and keeps the `k` with the lowest training error, first on ties.
/// Cluster labels are searched by CMA-ES over [0, 1]^k, rounded at 0.5.
pub fn train_cms(bags: &[Bag], k_grid: &[usize], seed: u64) -> Result<TrainedBagModel> {
    if k_grid.is_empty() {
        return Err(Error::domain("cms needs a non-empty cluster-count grid"));
    }
    let stacked = Stacked::new(bags)?;
    let z = extents(bags)?;
    let mut best: Option<(f64, KMeansModel, Vec<bool>)> = None;
    let mut errors = Vec::new();
    for &k in k_grid {
        if k == 0 || k > stacked.rows() {
            log::warn!("cms: skipping k = {k} ({} instances)", stacked.rows());
            continue;
        }
        let report = kmeans(&stacked.x, k, CMS_KMEANS_ITERS, KMeansInit::Bisecting, seed::derive(seed, &[k as u64, 0]))?;
        let counts = Counts {
            counts: stacked
                .ranges
                .iter()
                .map(|r| {
                    let mut row = vec![0u32; k];
                    for &a in &report.assignments[r.clone()] {
                        row[a] += 1;
                    }
                    row
                })
                .collect(),
            sizes: stacked.ranges.iter().map(|r| r.len() as f64).collect(),
            extents: z.clone(),
        };
        let config = CmaEsConfig {
            lambda: Some(CMS_CMAES_LAMBDA),
            max_iter: CMS_CMAES_MAX_ITER,
            seed: seed::derive(seed, &[k as u64, 1]),
            // the rounded objective is piecewise constant; flat generations
            // are not convergence
            tol_fun: 0.0,
            ..CmaEsConfig::default()
        };
        let found = cmaes_minimize(|l| counts.error(|c| l[c] >= 0.5), k, &config)?;
        let labels: Vec<bool> = found.best_x.iter().map(|&v| v >= 0.5).collect();
        let err = counts.error(|c| labels[c]);
        errors.push((k, err));
        if best.as_ref().is_none_or(|(e, _, _)| err < *e) {
            best = Some((err, report.model, labels));
        }
    }
    let (_, model, labels) = best.ok_or_else(|| {
        Error::domain(format!("every cms cluster count exceeds the {} training instances", stacked.rows()))
    })?;
    let params = LearnerModel::Cluster(ClusterLabeling {
        model,
        labels,
        training_errors: errors,
    });
    let spec = WeakClassifierSpec::new(Hyperparams::Cms { k: k_grid.to_vec() }, seed);
    finish(spec, Preprocessing::default(), params, TrainingInfo { iterations: 1, converged: true }, bags)
}
