use serde::{Deserialize, Serialize};
use statrs::function::gamma::{digamma, ln_gamma};

use super::logistic::sigmoid;
use super::matrix::{dot, Matrix};
use super::optim::Bfgs;
use super::ProbabilisticModel;
use crate::{Error, Result};

/// Beta regression with logit mean link and a single precision parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BetaModel {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub precision: f64,
}

impl BetaModel {
    pub fn mean(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.weights.len() {
            return Err(Error::domain(format!(
                "feature dimension {} != model dimension {}",
                x.len(),
                self.weights.len()
            )));
        }
        Ok(sigmoid(dot(&self.weights, x) + self.bias))
    }
}

impl ProbabilisticModel for BetaModel {
    fn predict_proba(&self, x: &[f64]) -> Result<f64> {
        self.mean(x)
    }
}

/// Maps `[0, 1]` into the open interval: `(y (n - 1) + 0.5) / n`.
pub fn squeeze_proportions(y: &[f64], n: usize) -> Result<Vec<f64>> {
    if n == 0 {
        return Err(Error::domain("squeeze needs n >= 1"));
    }
    let n = n as f64;
    y.iter()
        .map(|&v| {
            if (0.0..=1.0).contains(&v) {
                Ok((v * (n - 1.0) + 0.5) / n)
            } else {
                Err(Error::domain(format!("proportion {v} outside [0, 1]")))
            }
        })
        .collect()
}

const MU_EPS: f64 = 1e-12;

/// Mean negative beta log-likelihood and gradient.
///
/// `params` is `[w_0, .., w_{d-1}, bias, ln(precision)]`.
pub fn beta_objective(params: &[f64], x: &Matrix, y: &[f64]) -> (f64, Vec<f64>) {
    let d = x.cols();
    let w = &params[..d];
    let b = params[d];
    let phi = params[d + 1].exp();
    let n = x.rows() as f64;
    let lg_phi = ln_gamma(phi);
    let dg_phi = digamma(phi);
    let mut loss = 0.0;
    let mut grad = vec![0.0; d + 2];
    for (i, &yi) in y.iter().enumerate() {
        let row = x.row(i);
        let mu = sigmoid(dot(w, row) + b).clamp(MU_EPS, 1.0 - MU_EPS);
        let (a, c) = (mu * phi, (1.0 - mu) * phi);
        let (ly, l1y) = (yi.ln(), (-yi).ln_1p());
        loss -= lg_phi - ln_gamma(a) - ln_gamma(c) + (a - 1.0) * ly + (c - 1.0) * l1y;
        let (dg_a, dg_c) = (digamma(a), digamma(c));
        let dl_dmu = phi * (ly - l1y - dg_a + dg_c);
        let dl_deta = dl_dmu * mu * (1.0 - mu);
        for (g, xv) in grad[..d].iter_mut().zip(row) {
            *g -= dl_deta * xv;
        }
        grad[d] -= dl_deta;
        let dl_dphi = dg_phi - mu * dg_a - (1.0 - mu) * dg_c + mu * ly + (1.0 - mu) * l1y;
        grad[d + 1] -= dl_dphi * phi;
    }
    grad.iter_mut().for_each(|g| *g /= n);
    (loss / n, grad)
}

/// Maximum-likelihood fit; `y` must lie strictly inside `(0, 1)`.
pub fn fit_beta_regression(x: &Matrix, y: &[f64]) -> Result<BetaModel> {
    if y.len() != x.rows() {
        return Err(Error::domain("response count does not match instance count"));
    }
    if y.is_empty() {
        return Err(Error::domain("beta regression needs at least one observation"));
    }
    if !x.all_finite() {
        return Err(Error::domain("non-finite feature value"));
    }
    if let Some(v) = y.iter().find(|v| !(**v > 0.0 && **v < 1.0)) {
        return Err(Error::domain(format!("beta response {v} outside (0, 1)")));
    }
    let d = x.cols();
    let n = y.len() as f64;
    let m = y.iter().sum::<f64>() / n;
    let var = y.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n;
    let phi0 = if var > 0.0 {
        (m * (1.0 - m) / var - 1.0).clamp(0.1, 1e4)
    } else {
        1e4
    };
    let mut x0 = vec![0.0; d + 2];
    x0[d] = (m / (1.0 - m)).ln();
    x0[d + 1] = phi0.ln();
    let res = Bfgs::default().minimize(|p| beta_objective(p, x, y), x0)?;
    if res.x.iter().any(|v| !v.is_finite()) {
        return Err(Error::numerical("beta regression diverged"));
    }
    if !res.converged {
        log::debug!(
            "beta regression stopped after {} iterations, gradient {:.3e}",
            res.iterations,
            res.grad_norm
        );
    }
    Ok(BetaModel {
        weights: res.x[..d].to_vec(),
        bias: res.x[d],
        precision: res.x[d + 1].exp(),
    })
}
