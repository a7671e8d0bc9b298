use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::matrix::{dot, Matrix};
use super::ProbabilisticModel;
use crate::{Error, Result};

/// `p(y = 1 | x) = sigmoid(w'x + bias)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl LinearModel {
    pub fn decision(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.weights.len() {
            return Err(Error::domain(format!(
                "feature dimension {} != model dimension {}",
                x.len(),
                self.weights.len()
            )));
        }
        Ok(dot(&self.weights, x) + self.bias)
    }
}

impl ProbabilisticModel for LinearModel {
    fn predict_proba(&self, x: &[f64]) -> Result<f64> {
        Ok(sigmoid(self.decision(x)?))
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + exp(z))` without overflow.
pub(crate) fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// Weighted mean negative Bernoulli log-likelihood and its gradient.
///
/// `params` is `[w_0, .., w_{d-1}, bias]`.
pub fn logistic_objective(
    params: &[f64],
    x: &Matrix,
    y: &[bool],
    weights: Option<&[f64]>,
) -> (f64, Vec<f64>) {
    let d = x.cols();
    let (w, b) = params.split_at(d);
    let b = b[0];
    let mut loss = 0.0;
    let mut total = 0.0;
    let mut grad = vec![0.0; d + 1];
    for i in 0..x.rows() {
        let wi = weights.map_or(1.0, |ws| ws[i]);
        if wi == 0.0 {
            continue;
        }
        let row = x.row(i);
        let z = dot(w, row) + b;
        let yi = if y[i] { 1.0 } else { 0.0 };
        loss += wi * (softplus(z) - yi * z);
        total += wi;
        let r = wi * (sigmoid(z) - yi);
        for (g, xv) in grad[..d].iter_mut().zip(row) {
            *g += r * xv;
        }
        grad[d] += r;
    }
    let total = total.max(f64::MIN_POSITIVE);
    grad.iter_mut().for_each(|g| *g /= total);
    (loss / total, grad)
}

#[derive(Debug, Clone)]
pub struct LogisticFit {
    pub model: LinearModel,
    pub iterations: usize,
    pub converged: bool,
    /// Mean log-likelihood after each accepted Newton step.
    pub log_likelihood: Vec<f64>,
}

pub fn fit_logistic(x: &Matrix, y: &[bool], weights: Option<&[f64]>) -> Result<LinearModel> {
    fit_logistic_traced(x, y, weights).map(|f| f.model)
}

const MAX_ITER: usize = 500;
const GRAD_TOL: f64 = 1e-6;
const PRIOR_LOGIT_CAP: f64 = 30.0;

/// Maximum-likelihood logistic regression by damped Newton steps with
/// backtracking. Stops at gradient infinity-norm below 1e-6 or after 500
/// iterations.
pub fn fit_logistic_traced(
    x: &Matrix,
    y: &[bool],
    weights: Option<&[f64]>,
) -> Result<LogisticFit> {
    if y.len() != x.rows() {
        return Err(Error::domain("label count does not match instance count"));
    }
    if let Some(w) = weights {
        if w.len() != x.rows() || w.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::domain("sample weights must be finite, non-negative, one per row"));
        }
    }
    if !x.all_finite() {
        return Err(Error::domain("non-finite feature value"));
    }
    let d = x.cols();
    let (mut pos, mut neg) = (0.0, 0.0);
    for (i, &yi) in y.iter().enumerate() {
        let wi = weights.map_or(1.0, |w| w[i]);
        if yi {
            pos += wi
        } else {
            neg += wi
        }
    }
    if pos == 0.0 || neg == 0.0 {
        let prior = pos / (pos + neg).max(f64::MIN_POSITIVE);
        let logit = if prior <= 0.0 {
            -PRIOR_LOGIT_CAP
        } else if prior >= 1.0 {
            PRIOR_LOGIT_CAP
        } else {
            (prior / (1.0 - prior)).ln()
        };
        return Ok(LogisticFit {
            model: LinearModel {
                weights: vec![0.0; d],
                bias: logit,
            },
            iterations: 0,
            converged: true,
            log_likelihood: Vec::new(),
        });
    }

    let mut params = vec![0.0; d + 1];
    params[d] = (pos / neg).ln();
    let (mut f, mut g) = logistic_objective(&params, x, y, weights);
    let mut trace = vec![-f];
    let mut iterations = 0;
    let mut damping = 0.0;
    let grad_norm = |g: &[f64]| g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    while grad_norm(&g) >= GRAD_TOL && iterations < MAX_ITER {
        iterations += 1;
        let h = logistic_hessian(&params, x, weights);
        let gv = DVector::from_column_slice(&g);
        let scale = (0..=d).map(|i| h[(i, i)]).fold(0.0f64, f64::max).max(1e-12);
        let mut step = None;
        let mut tau = damping;
        for _ in 0..40 {
            let mut hd = h.clone();
            for i in 0..=d {
                hd[(i, i)] += tau * scale + 1e-12 * scale;
            }
            if let Some(ch) = hd.cholesky() {
                step = Some(ch.solve(&gv));
                break;
            }
            tau = if tau == 0.0 { 1e-10 } else { tau * 10.0 };
        }
        let Some(step) = step else {
            return Err(Error::numerical("logistic Hessian could not be factorized"));
        };
        let slope = -step.dot(&gv);
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let cand: Vec<f64> = params.iter().zip(step.iter()).map(|(p, s)| p - t * s).collect();
            let (fc, gc) = logistic_objective(&cand, x, y, weights);
            if fc.is_finite() && fc <= f + 1e-4 * t * slope {
                params = cand;
                f = fc;
                g = gc;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            break;
        }
        damping = if t == 1.0 { tau * 0.1 } else { tau.max(1e-10) };
        if damping < 1e-12 {
            damping = 0.0;
        }
        trace.push(-f);
    }
    if params.iter().any(|p| !p.is_finite()) {
        return Err(Error::numerical("logistic fit diverged"));
    }
    let bias = params.pop().unwrap_or(0.0);
    Ok(LogisticFit {
        model: LinearModel {
            weights: params,
            bias,
        },
        iterations,
        converged: grad_norm(&g) < GRAD_TOL,
        log_likelihood: trace,
    })
}

fn logistic_hessian(params: &[f64], x: &Matrix, weights: Option<&[f64]>) -> DMatrix<f64> {
    let d = x.cols();
    let (w, b) = params.split_at(d);
    let mut h = DMatrix::<f64>::zeros(d + 1, d + 1);
    let mut total = 0.0;
    let mut xt = vec![1.0; d + 1];
    for i in 0..x.rows() {
        let wi = weights.map_or(1.0, |ws| ws[i]);
        if wi == 0.0 {
            continue;
        }
        total += wi;
        let row = x.row(i);
        let p = sigmoid(dot(w, row) + b[0]);
        let s = wi * p * (1.0 - p);
        if s == 0.0 {
            continue;
        }
        xt[..d].copy_from_slice(row);
        for a in 0..=d {
            let sa = s * xt[a];
            for c in 0..=a {
                h[(a, c)] += sa * xt[c];
            }
        }
    }
    for a in 0..=d {
        for c in 0..a {
            h[(c, a)] = h[(a, c)];
        }
    }
    h / total.max(f64::MIN_POSITIVE)
}

#[cfg(test)]
mod tests {
    use rand::Rng;
    use rand_distr::{Distribution, StandardNormal};

    use super::*;
    use crate::learners::optim::numerical_gradient;
    use crate::seed;

    #[test]
    fn sigmoid_values() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!((sigmoid(3f64.ln()) - 0.75).abs() < 1e-15);
        assert_eq!(sigmoid(1000.0), 1.0);
        assert_eq!(sigmoid(-1000.0), 0.0);
        let m = LinearModel {
            weights: vec![0.0, 0.0],
            bias: 0.0,
        };
        assert_eq!(m.predict_proba(&[3.0, -1.0]).unwrap(), 0.5);
        assert!(m.predict_proba(&[1.0]).is_err());
        let big = LinearModel {
            weights: vec![0.0],
            bias: 50.0,
        };
        assert!(big.predict_proba(&[0.0]).unwrap() > 1.0 - 1e-15);
    }

    #[test]
    fn separated_one_dimensional_data() {
        let x = Matrix::from_rows(&[[-2.0], [-1.0], [-0.5], [0.5], [1.0], [2.0]]).unwrap();
        let y = [false, false, false, true, true, true];
        let fit = fit_logistic_traced(&x, &y, None).unwrap();
        for (i, &yi) in y.iter().enumerate() {
            assert_eq!(fit.model.predict_proba(x.row(i)).unwrap() > 0.5, yi);
        }
        assert!(fit.log_likelihood.windows(2).all(|w| w[1] >= w[0]));
    }

    #[test]
    fn single_class_gives_prior_model() {
        let x = Matrix::from_rows(&[[1.0], [2.0], [3.0]]).unwrap();
        let m = fit_logistic(&x, &[true; 3], None).unwrap();
        assert_eq!(m.weights, vec![0.0]);
        assert!((m.predict_proba(&[10.0]).unwrap() - 1.0).abs() < 1e-12);
        let m = fit_logistic(&x, &[false; 3], None).unwrap();
        assert!(m.predict_proba(&[10.0]).unwrap() < 1e-12);
    }

    #[test]
    fn rejects_non_finite() {
        let x = Matrix::from_rows(&[[f64::NAN], [1.0]]).unwrap();
        assert!(matches!(fit_logistic(&x, &[true, false], None), Err(Error::Domain(_))));
    }

    #[test]
    fn recovers_coefficients_and_converges() {
        let mut rng = seed::rng(5);
        let n = 4000;
        let mut rows = Vec::new();
        let mut y = Vec::new();
        for _ in 0..n {
            let a: f64 = StandardNormal.sample(&mut rng);
            let b: f64 = StandardNormal.sample(&mut rng);
            let p = sigmoid(1.5 * a - 0.5 * b + 0.3);
            y.push(rng.random::<f64>() < p);
            rows.push([a, b]);
        }
        let x = Matrix::from_rows(&rows).unwrap();
        let fit = fit_logistic_traced(&x, &y, None).unwrap();
        assert!(fit.converged);
        let (_, g) = logistic_objective(
            &[fit.model.weights[0], fit.model.weights[1], fit.model.bias],
            &x,
            &y,
            None,
        );
        assert!(g.iter().all(|v| v.abs() < 1e-6));
        assert!((fit.model.weights[0] - 1.5).abs() < 0.2);
        assert!((fit.model.weights[1] + 0.5).abs() < 0.2);
    }

    #[test]
    fn gradient_matches_central_differences() {
        let mut rng = seed::rng(9);
        let rows: Vec<[f64; 3]> = (0..50)
            .map(|_| [rng.random::<f64>() * 2.0 - 1.0, rng.random(), rng.random::<f64>() - 0.3])
            .collect();
        let x = Matrix::from_rows(&rows).unwrap();
        let y: Vec<bool> = (0..50).map(|i| i % 3 == 0).collect();
        let w: Vec<f64> = (0..50).map(|i| 0.5 + (i % 4) as f64).collect();
        for _ in 0..10 {
            let p: Vec<f64> = (0..4).map(|_| rng.random::<f64>() * 4.0 - 2.0).collect();
            let (_, g) = logistic_objective(&p, &x, &y, Some(&w));
            let num = numerical_gradient(|q| logistic_objective(q, &x, &y, Some(&w)).0, &p, 1e-6);
            for (a, b) in g.iter().zip(&num) {
                assert!((a - b).abs() <= 1e-5 * a.abs().max(b.abs()).max(1e-3), "{a} vs {b}");
            }
        }
    }
}
