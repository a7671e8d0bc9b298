//! Laplacian mean map.
//!
//! Each bag average is modelled as `avg_i = z_i m+_i + (1 - z_i) m-_i` with
//! unknown class-conditional means. With `s = m+ + m-`, `a = m+ - m-` and
//! `D = diag(z - 1/2)` the residual is `avg - s/2 - D a`; adding
//! `lambda * (m+' L m+ + m-' L m-) = lambda/2 * (s' L s + a' L a)` for the
//! bag-similarity Laplacian `L` gives the normal equations
//!
//! ```text
//! [ I/4 + lambda/2 L     D/2           ] [s]   [ avg/2 ]
//! [ D/2                  D^2 + lambda/2 L ] [a] = [ D avg ]
//! ```
//!
//! The signed bag mean is `mu_i = z_i m+_i - (1 - z_i) m-_i = D s + a/2`
//! and the mean operator is `mu = sum_i |b_i|/n mu_i`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{extents, finish, Hyperparams, LearnerModel, Preprocessing, Stacked, TrainedBagModel, TrainingInfo, WeakClassifierSpec};
use crate::bagcore::Bag;
use crate::learners::optim::Bfgs;
use crate::learners::{sigmoid, softplus, LinearModel, Matrix};
use crate::{Error, Result};

const RIDGE: f64 = 1e-8;
const REFINE_STEPS: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanOperator {
    /// Feature part of the mean operator.
    pub mu: Vec<f64>,
    /// Mean of the signed labels, the bias coordinate of the operator.
    pub mu_bias: f64,
    pub bag_sizes: Vec<usize>,
    /// `mu_i` per bag.
    pub bag_means: Vec<Vec<f64>>,
    pub positive_means: Vec<Vec<f64>>,
    pub negative_means: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanMapModel {
    pub linear: LinearModel,
    pub operator: MeanOperator,
}

fn bag_averages(stacked: &Stacked) -> Vec<Vec<f64>> {
    let d = stacked.x.cols();
    stacked
        .ranges
        .iter()
        .map(|r| {
            let mut avg = vec![0.0; d];
            for i in r.clone() {
                for (a, v) in avg.iter_mut().zip(stacked.x.row(i)) {
                    *a += v;
                }
            }
            avg.iter_mut().for_each(|a| *a /= r.len() as f64);
            avg
        })
        .collect()
}

/// `I - D^-1/2 W D^-1/2` on nodes with positive degree; isolated nodes get
/// zero rows. `W_ij = exp(-|avg_i - avg_j| / sigma)`, `W_ii = 0`.
fn normalized_laplacian(avgs: &[Vec<f64>], sigma: f64) -> DMatrix<f64> {
    let m = avgs.len();
    let mut w = DMatrix::zeros(m, m);
    for i in 0..m {
        for j in i + 1..m {
            let dist: f64 = avgs[i].iter().zip(&avgs[j]).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            let v = (-dist / sigma).exp();
            w[(i, j)] = v;
            w[(j, i)] = v;
        }
    }
    let deg: Vec<f64> = (0..m).map(|i| w.row(i).sum()).collect();
    DMatrix::from_fn(m, m, |i, j| {
        if deg[i] <= 0.0 || deg[j] <= 0.0 {
            return 0.0;
        }
        let off = w[(i, j)] / deg[i].sqrt() / deg[j].sqrt();
        if i == j {
            1.0 - off
        } else {
            -off
        }
    })
}

fn solve_spd(mut a: DMatrix<f64>, b: &DMatrix<f64>, lambda: f64) -> Result<DMatrix<f64>> {
    if let Some(ch) = a.clone().cholesky() {
        return Ok(ch.solve(b));
    }
    // lambda = 0 is always singular (bags decouple and each has one equation
    // for two unknowns), so only warn when regularization was requested
    if lambda > 0.0 {
        log::warn!("mean-map system is singular; adding ridge {RIDGE}");
    } else {
        log::debug!("mean-map system is singular; adding ridge {RIDGE}");
    }
    let original = a.clone();
    let n = a.nrows();
    for i in 0..n {
        a[(i, i)] += RIDGE;
    }
    let ch = a
        .cholesky()
        .ok_or_else(|| Error::numerical("mean-map system is not positive definite even after ridge"))?;
    // the normal equations are consistent, so refinement removes the ridge
    // bias on the range of the system
    let mut x = ch.solve(b);
    for _ in 0..REFINE_STEPS {
        let r = b - &original * &x;
        x += ch.solve(&r);
    }
    Ok(x)
}

/// Solves for the class-conditional bag means and assembles the mean
/// operator.
pub fn estimate_mean_operator(bags: &[Bag], lambda: f64, sigma: f64) -> Result<MeanOperator> {
    let stacked = Stacked::new(bags)?;
    estimate_on(&stacked, &extents(bags)?, lambda, sigma)
}

fn estimate_on(stacked: &Stacked, z: &[f64], lambda: f64, sigma: f64) -> Result<MeanOperator> {
    if !(lambda >= 0.0 && lambda.is_finite()) || !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::domain("lambda must be >= 0 and sigma > 0"));
    }
    let m = stacked.ranges.len();
    let d = stacked.x.cols();
    let avgs = bag_averages(stacked);
    let lap = normalized_laplacian(&avgs, sigma);
    let dz: Vec<f64> = z.iter().map(|v| v - 0.5).collect();
    let mut sys = DMatrix::zeros(2 * m, 2 * m);
    for i in 0..m {
        for j in 0..m {
            let l = 0.5 * lambda * lap[(i, j)];
            sys[(i, j)] = l;
            sys[(m + i, m + j)] = l;
        }
        sys[(i, i)] += 0.25;
        sys[(m + i, m + i)] += dz[i] * dz[i];
        sys[(i, m + i)] = 0.5 * dz[i];
        sys[(m + i, i)] = 0.5 * dz[i];
    }
    let rhs = DMatrix::from_fn(2 * m, d, |r, c| if r < m { 0.5 * avgs[r][c] } else { dz[r - m] * avgs[r - m][c] });
    let sol = solve_spd(sys, &rhs, lambda)?;
    let n = stacked.rows() as f64;
    let mut mu = vec![0.0; d];
    let mut mu_bias = 0.0;
    let mut bag_means = Vec::with_capacity(m);
    let mut positive_means = Vec::with_capacity(m);
    let mut negative_means = Vec::with_capacity(m);
    for i in 0..m {
        let s = sol.row(i);
        let a = sol.row(m + i);
        let mean_i: Vec<f64> = s.iter().zip(a.iter()).map(|(s, a)| dz[i] * s + 0.5 * a).collect();
        let weight = stacked.ranges[i].len() as f64 / n;
        for (acc, v) in mu.iter_mut().zip(&mean_i) {
            *acc += weight * v;
        }
        mu_bias += weight * (2.0 * z[i] - 1.0);
        positive_means.push(s.iter().zip(a.iter()).map(|(s, a)| 0.5 * (s + a)).collect());
        negative_means.push(s.iter().zip(a.iter()).map(|(s, a)| 0.5 * (s - a)).collect());
        bag_means.push(mean_i);
    }
    Ok(MeanOperator {
        mu,
        mu_bias,
        bag_sizes: stacked.ranges.iter().map(|r| r.len()).collect(),
        bag_means,
        positive_means,
        negative_means,
    })
}

/// `(1/n) sum_i (F(t.x_i) + F(-t.x_i))/2 - t.mu/2 + gamma |t|^2` with
/// `F(v) = log(1 + exp(-v))` and the bias folded into `t`; equals the mean
/// logistic loss when `mu` is the true mean operator.
pub(crate) fn mean_map_objective(theta: &[f64], x: &Matrix, op: &MeanOperator, gamma: f64) -> (f64, Vec<f64>) {
    let d = x.cols();
    let n = x.rows() as f64;
    let (w, b) = theta.split_at(d);
    let mut value = 0.0;
    let mut grad = vec![0.0; d + 1];
    for row in x.iter_rows() {
        let t: f64 = row.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() + b[0];
        value += 0.5 * (softplus(-t) + softplus(t));
        let g = sigmoid(t) - 0.5;
        for (gi, xi) in grad.iter_mut().zip(row) {
            *gi += g * xi;
        }
        grad[d] += g;
    }
    value /= n;
    grad.iter_mut().for_each(|g| *g /= n);
    let mu_dot: f64 = w.iter().zip(&op.mu).map(|(a, b)| a * b).sum::<f64>() + b[0] * op.mu_bias;
    value += -0.5 * mu_dot + gamma * theta.iter().map(|v| v * v).sum::<f64>();
    for (i, gi) in grad.iter_mut().enumerate() {
        let mu_i = if i < d { op.mu[i] } else { op.mu_bias };
        *gi += -0.5 * mu_i + 2.0 * gamma * theta[i];
    }
    (value, grad)
}

pub fn train_lmm(bags: &[Bag], lambda: f64, gamma: f64, sigma: f64, seed: u64) -> Result<TrainedBagModel> {
    let stacked = Stacked::new(bags)?;
    let z = extents(bags)?;
    let operator = estimate_on(&stacked, &z, lambda, sigma)?;
    let d = stacked.x.cols();
    let fit = Bfgs::default().minimize(|t| mean_map_objective(t, &stacked.x, &operator, gamma), vec![0.0; d + 1])?;
    if !fit.converged {
        log::warn!("lmm: optimizer stopped after {} iterations (gradient {:.3e})", fit.iterations, fit.grad_norm);
    }
    let linear = LinearModel {
        weights: fit.x[..d].to_vec(),
        bias: fit.x[d],
    };
    let spec = WeakClassifierSpec::new(Hyperparams::Lmm { lambda, gamma, sigma }, seed);
    let info = TrainingInfo {
        iterations: 1,
        converged: fit.converged,
    };
    finish(spec, Preprocessing::default(), LearnerModel::MeanMap(MeanMapModel { linear, operator }), info, bags)
}
