//! Hyperparameter grids and cross-validated selection.
//!
//! A grid file is either a JSON array of explicit points
//! (`[{"method": "misvm", "kernel": {"type": "linear"}, "c": 1}, ...]`) or an
//! object of value lists whose cartesian product is the grid:
//!
//! | method         | keys                                   |
//! |----------------|----------------------------------------|
//! | log, beta      | `reduce`                               |
//! | svm, misvm     | `kernel` (`linear`/`rbf`), `c`, `gamma` |
//! | psvm           | as svm plus `c2`                       |
//! | cms            | `k`: integers, or lists of candidates   |
//! | lmm            | `lambda`, `gamma`, `sigma`             |
//!
//! Missing keys take the default grid's values; `gamma` only multiplies the
//! rbf kernel.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::bagcore::Bag;
use crate::learners::Kernel;
use crate::weak::{
    self, default_grid, Hyperparams, Method, TrainedBagModel, WeakClassifierSpec, CMS_K_GRID, LMM_GAMMA_GRID,
    LMM_LAMBDA_GRID, LMM_SIGMA_GRID, PSVM_C2_GRID, RBF_GAMMA_GRID, SVM_C_GRID,
};
use crate::{seed, Error, Result};

fn list<T>(obj: &serde_json::Map<String, Value>, key: &str, default: &[T]) -> Result<Vec<T>>
where
    T: serde::de::DeserializeOwned + Clone,
{
    match obj.get(key) {
        None => Ok(default.to_vec()),
        Some(Value::Array(items)) => {
            if items.is_empty() {
                return Err(Error::config(format!("grid key `{key}` has no values")));
            }
            items
                .iter()
                .map(|v| serde_json::from_value(v.clone()).map_err(|e| Error::config(format!("grid key `{key}`: {e}"))))
                .collect()
        }
        Some(v) => serde_json::from_value(v.clone())
            .map(|x| vec![x])
            .map_err(|e| Error::config(format!("grid key `{key}`: {e}"))),
    }
}

fn kernels(obj: &serde_json::Map<String, Value>) -> Result<Vec<Kernel>> {
    let names: Vec<String> = list(obj, "kernel", &["linear".to_string(), "rbf".to_string()])?;
    let gammas: Vec<f64> = list(obj, "gamma", &RBF_GAMMA_GRID)?;
    let mut out = Vec::new();
    for n in names {
        match n.as_str() {
            "linear" => out.push(Kernel::Linear),
            "rbf" => out.extend(gammas.iter().map(|&gamma| Kernel::Rbf { gamma })),
            other => return Err(Error::config(format!("unknown kernel `{other}`"))),
        }
    }
    Ok(out)
}

fn kernel_c(obj: &serde_json::Map<String, Value>) -> Result<Vec<(Kernel, f64)>> {
    let cs: Vec<f64> = list(obj, "c", &SVM_C_GRID)?;
    let ks = kernels(obj)?;
    // linear points first, then rbf by C then gamma, like the default grid
    let mut out = Vec::new();
    for k in ks.iter().filter(|k| matches!(k, Kernel::Linear)) {
        out.extend(cs.iter().map(|&c| (*k, c)));
    }
    for &c in &cs {
        out.extend(ks.iter().filter(|k| matches!(k, Kernel::Rbf { .. })).map(|&k| (k, c)));
    }
    Ok(out)
}

#[derive(Deserialize)]
#[serde(untagged)]
enum KSpec {
    One(usize),
    Many(Vec<usize>),
}

/// Expands a grid description for `method`.
pub fn parse_grid(method: Method, value: &Value) -> Result<Vec<Hyperparams>> {
    let grid = match value {
        Value::Array(points) => points
            .iter()
            .map(|p| serde_json::from_value::<Hyperparams>(p.clone()).map_err(|e| Error::config(format!("grid point: {e}"))))
            .collect::<Result<Vec<_>>>()?,
        Value::Object(obj) => {
            let allowed: &[&str] = match method {
                Method::Log | Method::Beta => &["reduce"],
                Method::Svm | Method::Misvm => &["kernel", "c", "gamma"],
                Method::Psvm => &["kernel", "c", "gamma", "c2"],
                Method::Cms => &["k"],
                Method::Lmm => &["lambda", "gamma", "sigma"],
                Method::Milog | Method::Plog => &[],
            };
            if let Some(bad) = obj.keys().find(|k| !allowed.contains(&k.as_str())) {
                return Err(Error::config(format!("grid key `{bad}` does not apply to {method}")));
            }
            match method {
                Method::Log => list(obj, "reduce", &[false, true])?.into_iter().map(|reduce| Hyperparams::Log { reduce }).collect(),
                Method::Beta => list(obj, "reduce", &[false, true])?.into_iter().map(|reduce| Hyperparams::Beta { reduce }).collect(),
                Method::Svm => kernel_c(obj)?.into_iter().map(|(kernel, c)| Hyperparams::Svm { kernel, c }).collect(),
                Method::Misvm => kernel_c(obj)?.into_iter().map(|(kernel, c)| Hyperparams::Misvm { kernel, c }).collect(),
                Method::Psvm => {
                    let c2s: Vec<f64> = list(obj, "c2", &PSVM_C2_GRID)?;
                    kernel_c(obj)?
                        .into_iter()
                        .flat_map(|(kernel, c)| c2s.iter().map(move |&c2| Hyperparams::Psvm { kernel, c, c2 }))
                        .collect()
                }
                Method::Milog => vec![Hyperparams::Milog],
                Method::Plog => vec![Hyperparams::Plog],
                Method::Cms => match obj.get("k") {
                    None => vec![Hyperparams::Cms { k: CMS_K_GRID.to_vec() }],
                    Some(v) => {
                        let specs: Vec<KSpec> = match v {
                            Value::Array(_) => serde_json::from_value(v.clone()),
                            _ => serde_json::from_value(v.clone()).map(|s| vec![s]),
                        }
                        .map_err(|e| Error::config(format!("grid key `k`: {e}")))?;
                        specs
                            .into_iter()
                            .map(|s| match s {
                                KSpec::One(k) => Hyperparams::Cms { k: vec![k] },
                                KSpec::Many(k) => Hyperparams::Cms { k },
                            })
                            .collect()
                    }
                },
                Method::Lmm => {
                    let lambdas: Vec<f64> = list(obj, "lambda", &LMM_LAMBDA_GRID)?;
                    let gammas: Vec<f64> = list(obj, "gamma", &LMM_GAMMA_GRID)?;
                    let sigmas: Vec<f64> = list(obj, "sigma", &LMM_SIGMA_GRID)?;
                    let mut out = Vec::new();
                    for &lambda in &lambdas {
                        for &gamma in &gammas {
                            for &sigma in &sigmas {
                                out.push(Hyperparams::Lmm { lambda, gamma, sigma });
                            }
                        }
                    }
                    out
                }
            }
        }
        _ => return Err(Error::config("grid must be a JSON object of value lists or an array of points")),
    };
    if grid.is_empty() {
        return Err(Error::domain("hyperparameter grid is empty"));
    }
    for p in &grid {
        if p.method() != method {
            return Err(Error::config(format!("grid point for {} in a {method} grid", p.method())));
        }
        p.validate()?;
    }
    Ok(grid)
}

/// Fold of a bag: a function of the seed and bag id only.
pub fn fold_of(seed: u64, bag_id: &str, folds: usize) -> usize {
    (seed::derive(seed, &[seed::hash_str("cv-fold"), seed::hash_str(bag_id)]) % folds as u64) as usize
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvPoint {
    pub hyperparameters: Hyperparams,
    /// Mean absolute extent error over held-out bags; absent if any fold
    /// failed to train.
    pub cv_mae: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSearch {
    pub method: Method,
    pub cv_folds: usize,
    pub seed: u64,
    pub points: Vec<CvPoint>,
    pub selected: usize,
}

impl GridSearch {
    pub fn selected_point(&self) -> &Hyperparams {
        &self.points[self.selected].hyperparameters
    }
}

fn cv_mae(point: &Hyperparams, idx: usize, bags: &[Bag], folds: &[usize], n_folds: usize, seed: u64) -> Result<f64> {
    let mut abs_err = 0.0;
    let mut count = 0usize;
    for f in 0..n_folds {
        let train: Vec<Bag> = bags.iter().zip(folds).filter(|(_, &g)| g != f).map(|(b, _)| b.clone()).collect();
        let test: Vec<&Bag> = bags.iter().zip(folds).filter(|(_, &g)| g == f).map(|(b, _)| b).collect();
        let spec = WeakClassifierSpec::new(point.clone(), seed::derive(seed, &[idx as u64, f as u64]));
        let model = weak::train(&spec, &train)?;
        for b in test {
            abs_err += (model.predict_extent(b)? - b.require_extent()?).abs();
            count += 1;
        }
    }
    Ok(abs_err / count as f64)
}

/// Scores every grid point by k-fold CV extent MAE (a single point skips
/// CV), refits the best on all bags under `seed` and returns it.
pub fn run_grid_search(
    method: Method,
    grid: &[Hyperparams],
    bags: &[Bag],
    cv_folds: usize,
    seed: u64,
) -> Result<(TrainedBagModel, GridSearch)> {
    if grid.is_empty() {
        return Err(Error::domain("hyperparameter grid is empty"));
    }
    if cv_folds < 2 {
        return Err(Error::config("cv_folds must be at least 2"));
    }
    let points: Vec<CvPoint> = if grid.len() == 1 {
        vec![CvPoint {
            hyperparameters: grid[0].clone(),
            cv_mae: None,
            error: None,
        }]
    } else {
        let folds: Vec<usize> = bags.iter().map(|b| fold_of(seed, &b.id, cv_folds)).collect();
        if (0..cv_folds).any(|f| !folds.contains(&f)) {
            return Err(Error::data(format!("{} bags cannot fill {cv_folds} CV folds", bags.len())));
        }
        let cv_seed = seed::derive_str(seed, "cv");
        grid.par_iter()
            .enumerate()
            .map(|(i, p)| match cv_mae(p, i, bags, &folds, cv_folds, cv_seed) {
                Ok(m) => CvPoint {
                    hyperparameters: p.clone(),
                    cv_mae: Some(m),
                    error: None,
                },
                Err(e) => {
                    log::warn!("{method} grid point {i} failed in CV: {e}");
                    CvPoint {
                        hyperparameters: p.clone(),
                        cv_mae: None,
                        error: Some(e.to_string()),
                    }
                }
            })
            .collect()
    };
    let selected = if points.len() == 1 {
        0
    } else {
        let mut best: Option<(usize, f64)> = None;
        for (i, p) in points.iter().enumerate() {
            if let Some(m) = p.cv_mae {
                if best.is_none_or(|(_, b)| m < b) {
                    best = Some((i, m));
                }
            }
        }
        best.ok_or_else(|| Error::numerical(format!("every {method} grid point failed in cross-validation")))?.0
    };
    let spec = WeakClassifierSpec::new(points[selected].hyperparameters.clone(), seed);
    let model = weak::train(&spec, bags)?;
    Ok((
        model,
        GridSearch {
            method,
            cv_folds,
            seed,
            points,
            selected,
        },
    ))
}

/// The default grid, exposed here for symmetry with [`parse_grid`].
pub fn grid_or_default(method: Method, value: Option<&Value>) -> Result<Vec<Hyperparams>> {
    match value {
        Some(v) => parse_grid(method, v),
        None => Ok(default_grid(method)),
    }
}
