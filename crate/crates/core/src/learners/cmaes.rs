//! (mu/mu_w, lambda)-CMA-ES with rank-one and rank-mu covariance updates,
//! cumulative step-size adaptation and lazily refreshed eigendecomposition.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand_distr::{Distribution, StandardNormal};

use crate::{seed, Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct CmaEsConfig {
    /// Population size; `None` uses `4 + floor(3 ln n)`.
    pub lambda: Option<usize>,
    pub max_iter: usize,
    pub sigma0: f64,
    /// Starting mean; `None` puts every coordinate at 0.5.
    pub mean0: Option<Vec<f64>>,
    pub tol_x: f64,
    pub tol_fun: f64,
    pub seed: u64,
}

impl Default for CmaEsConfig {
    fn default() -> Self {
        CmaEsConfig {
            lambda: None,
            max_iter: 1000,
            sigma0: 0.3,
            mean0: None,
            tol_x: 1e-12,
            tol_fun: 1e-12,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CmaEsResult {
    pub best_x: Vec<f64>,
    pub best_value: f64,
    pub iterations: usize,
    pub evaluations: usize,
    /// Best value of each generation.
    pub history: Vec<f64>,
}

pub fn cmaes_minimize<F>(mut f: F, dim: usize, config: &CmaEsConfig) -> Result<CmaEsResult>
where
    F: FnMut(&[f64]) -> f64,
{
    if dim == 0 {
        return Err(Error::domain("CMA-ES needs dimension >= 1"));
    }
    let n = dim as f64;
    let lambda = config.lambda.unwrap_or(4 + (3.0 * n.ln()).floor() as usize);
    if lambda < 2 {
        return Err(Error::domain("CMA-ES population must be at least 2"));
    }
    if !(config.sigma0 > 0.0 && config.sigma0.is_finite()) {
        return Err(Error::domain("CMA-ES step size must be positive"));
    }
    let mut mean = match &config.mean0 {
        Some(m) if m.len() != dim => {
            return Err(Error::domain("CMA-ES start point has the wrong dimension"))
        }
        Some(m) => DVector::from_column_slice(m),
        None => DVector::from_element(dim, 0.5),
    };
    let f0 = f(mean.as_slice());
    if !f0.is_finite() {
        return Err(Error::domain("objective is not finite at the start point"));
    }
    let mut best_x = mean.as_slice().to_vec();
    let mut best_value = f0;
    let mut evaluations = 1;

    let mu = lambda / 2;
    let raw: Vec<f64> = (1..=mu)
        .map(|i| (mu as f64 + 0.5).ln() - (i as f64).ln())
        .collect();
    let wsum: f64 = raw.iter().sum();
    let weights: Vec<f64> = raw.iter().map(|w| w / wsum).collect();
    let mueff = 1.0 / weights.iter().map(|w| w * w).sum::<f64>();

    let cc = (4.0 + mueff / n) / (n + 4.0 + 2.0 * mueff / n);
    let cs = (mueff + 2.0) / (n + mueff + 5.0);
    let c1 = 2.0 / ((n + 1.3).powi(2) + mueff);
    let cmu = (1.0 - c1).min(2.0 * (mueff - 2.0 + 1.0 / mueff) / ((n + 2.0).powi(2) + mueff));
    let damps = 1.0 + 2.0 * (((mueff - 1.0) / (n + 1.0)).sqrt() - 1.0).max(0.0) + cs;
    let chi_n = n.sqrt() * (1.0 - 1.0 / (4.0 * n) + 1.0 / (21.0 * n * n));
    let eigen_every = ((1.0 / ((c1 + cmu) * n * 10.0)).floor() as usize).max(1);

    let mut sigma = config.sigma0;
    let mut pc = DVector::<f64>::zeros(dim);
    let mut ps = DVector::<f64>::zeros(dim);
    let mut c = DMatrix::<f64>::identity(dim, dim);
    let mut b = DMatrix::<f64>::identity(dim, dim);
    let mut dvec = DVector::<f64>::from_element(dim, 1.0);
    let mut inv_sqrt_c = DMatrix::<f64>::identity(dim, dim);

    let mut rng = seed::rng(config.seed);
    let mut history = Vec::new();
    let tolfun_window = 10 + (30.0 * n / lambda as f64).ceil() as usize;
    let mut iterations = 0;

    while iterations < config.max_iter {
        iterations += 1;
        let mut pop: Vec<(f64, DVector<f64>, DVector<f64>)> = Vec::with_capacity(lambda);
        for _ in 0..lambda {
            let z = DVector::<f64>::from_fn(dim, |_, _| StandardNormal.sample(&mut rng));
            let y = &b * z.component_mul(&dvec);
            let x = &mean + &y * sigma;
            let mut fx = f(x.as_slice());
            evaluations += 1;
            if !fx.is_finite() {
                fx = f64::INFINITY;
            }
            pop.push((fx, x, y));
        }
        // stable: equal values keep sampling order
        pop.sort_by(|a, b| a.0.total_cmp(&b.0));
        if pop[0].0 < best_value {
            best_value = pop[0].0;
            best_x = pop[0].1.as_slice().to_vec();
        }
        history.push(pop[0].0);

        let old_mean = mean.clone();
        mean = DVector::zeros(dim);
        for (w, (_, x, _)) in weights.iter().zip(&pop) {
            mean += x * *w;
        }
        let y_w = (&mean - &old_mean) / sigma;
        ps = &ps * (1.0 - cs) + &inv_sqrt_c * &y_w * (cs * (2.0 - cs) * mueff).sqrt();
        let ps_norm = ps.norm();
        let hsig = ps_norm / (1.0 - (1.0 - cs).powi(2 * iterations as i32)).sqrt() / chi_n
            < 1.4 + 2.0 / (n + 1.0);
        let hs = if hsig { 1.0 } else { 0.0 };
        pc = &pc * (1.0 - cc) + &y_w * (hs * (cc * (2.0 - cc) * mueff).sqrt());
        let mut rank_mu = DMatrix::<f64>::zeros(dim, dim);
        for (w, (_, _, y)) in weights.iter().zip(&pop) {
            rank_mu += y * y.transpose() * *w;
        }
        c = &c * (1.0 - c1 - cmu)
            + (&pc * pc.transpose() + &c * ((1.0 - hs) * cc * (2.0 - cc))) * c1
            + rank_mu * cmu;
        sigma *= ((cs / damps) * (ps_norm / chi_n - 1.0)).exp();
        if !sigma.is_finite() || c.iter().any(|v| !v.is_finite()) {
            break;
        }

        if iterations % eigen_every == 0 {
            let sym = (&c + c.transpose()) * 0.5;
            c = sym.clone();
            let eig = SymmetricEigen::new(sym);
            b = eig.eigenvectors;
            dvec = eig.eigenvalues.map(|v| v.max(1e-300).sqrt());
            let inv_d = DMatrix::from_diagonal(&dvec.map(|v| 1.0 / v));
            inv_sqrt_c = &b * inv_d * b.transpose();
        }

        let max_d = dvec.max();
        if sigma * max_d < config.tol_x {
            break;
        }
        let gen_range = pop[pop.len() - 1].0 - pop[0].0;
        if history.len() >= tolfun_window {
            let recent = &history[history.len() - tolfun_window..];
            let hi = recent.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lo = recent.iter().copied().fold(f64::INFINITY, f64::min);
            if gen_range.is_finite() && gen_range < config.tol_fun && hi - lo < config.tol_fun {
                break;
            }
        }
    }
    Ok(CmaEsResult {
        best_x,
        best_value,
        iterations,
        evaluations,
        history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sphere(x: &[f64]) -> f64 {
        x.iter().map(|v| v * v).sum()
    }

    fn rosenbrock(x: &[f64]) -> f64 {
        (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2)
    }

    #[test]
    fn sphere_five_dimensions() {
        let r = cmaes_minimize(sphere, 5, &CmaEsConfig::default()).unwrap();
        assert!(r.best_value < 1e-8, "{}", r.best_value);
        assert!(r.iterations <= 1000);
    }

    #[test]
    fn rosenbrock_two_dimensions() {
        let cfg = CmaEsConfig {
            seed: 3,
            ..Default::default()
        };
        let r = cmaes_minimize(rosenbrock, 2, &cfg).unwrap();
        assert!(r.best_value < 1e-4, "{}", r.best_value);
        assert!((r.best_x[0] - 1.0).abs() < 1e-2 && (r.best_x[1] - 1.0).abs() < 2e-2);
    }

    #[test]
    fn same_seed_same_trajectory() {
        let cfg = CmaEsConfig {
            lambda: Some(13),
            max_iter: 50,
            seed: 42,
            ..Default::default()
        };
        let a = cmaes_minimize(rosenbrock, 2, &cfg).unwrap();
        let b = cmaes_minimize(rosenbrock, 2, &cfg).unwrap();
        assert_eq!(a.history, b.history);
        assert_eq!(a.best_x, b.best_x);
    }

    #[test]
    fn start_must_be_finite() {
        let r = cmaes_minimize(|_| f64::NAN, 3, &CmaEsConfig::default());
        assert!(matches!(r, Err(Error::Domain(_))));
        let cfg = CmaEsConfig {
            lambda: Some(1),
            ..Default::default()
        };
        assert!(cmaes_minimize(sphere, 2, &cfg).is_err());
    }

    #[test]
    fn non_finite_samples_rank_last() {
        let f = |x: &[f64]| if x[0] < 0.0 { f64::NAN } else { (x[0] - 0.2).powi(2) };
        let r = cmaes_minimize(f, 1, &CmaEsConfig::default()).unwrap();
        assert!(r.best_value < 1e-10);
    }
}
