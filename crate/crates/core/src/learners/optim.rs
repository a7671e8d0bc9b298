//! Dense BFGS with Armijo backtracking, for smooth objectives of modest
//! dimension.

use nalgebra::{DMatrix, DVector};

use crate::{Error, Result};

#[derive(Debug, Clone)]
pub struct OptimResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Objective value after every accepted step, starting with `f(x0)`.
    pub trace: Vec<f64>,
}

pub struct Bfgs {
    pub grad_tol: f64,
    pub max_iter: usize,
}

impl Default for Bfgs {
    fn default() -> Self {
        Bfgs {
            grad_tol: 1e-6,
            max_iter: 500,
        }
    }
}

fn inf_norm(g: &[f64]) -> f64 {
    g.iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

impl Bfgs {
    /// Minimizes `f`, which returns the value and gradient at a point.
    pub fn minimize<F>(&self, mut f: F, x0: Vec<f64>) -> Result<OptimResult>
    where
        F: FnMut(&[f64]) -> (f64, Vec<f64>),
    {
        let n = x0.len();
        let mut x = DVector::from_vec(x0);
        let (mut fx, g0) = f(x.as_slice());
        if !fx.is_finite() || g0.iter().any(|v| !v.is_finite()) {
            return Err(Error::numerical("objective not finite at the starting point"));
        }
        let mut g = DVector::from_vec(g0);
        let mut h = DMatrix::<f64>::identity(n, n);
        let mut trace = vec![fx];
        let mut iterations = 0;
        let mut converged = inf_norm(g.as_slice()) < self.grad_tol;
        let mut first = true;
        while !converged && iterations < self.max_iter {
            iterations += 1;
            let mut dir = -(&h * &g);
            let mut slope = dir.dot(&g);
            if slope >= 0.0 {
                // lost positive definiteness; restart from steepest descent
                h = DMatrix::identity(n, n);
                dir = -g.clone();
                slope = dir.dot(&g);
            }
            // scale the very first step so it is not absurdly long
            let mut step = if first {
                (1.0 / dir.amax().max(1e-12)).min(1.0)
            } else {
                1.0
            };
            first = false;
            let mut accepted = None;
            for _ in 0..60 {
                let xn = &x + &dir * step;
                let (fnew, gnew) = f(xn.as_slice());
                if fnew.is_finite() && fnew <= fx + 1e-4 * step * slope {
                    accepted = Some((xn, fnew, DVector::from_vec(gnew)));
                    break;
                }
                step *= 0.5;
            }
            let Some((xn, fnew, gnew)) = accepted else {
                // no decrease possible along the direction: numerically converged
                break;
            };
            let s = &xn - &x;
            let y = &gnew - &g;
            let sy = s.dot(&y);
            if sy > 1e-12 * s.norm() * y.norm() {
                let rho = 1.0 / sy;
                let hy = &h * &y;
                let yhy = y.dot(&hy);
                // H+ = H - rho (s hy' + hy s') + (rho^2 yhy + rho) s s'
                h -= (&s * hy.transpose() + &hy * s.transpose()) * rho;
                h += (&s * s.transpose()) * (rho * rho * yhy + rho);
            }
            x = xn;
            fx = fnew;
            g = gnew;
            trace.push(fx);
            converged = inf_norm(g.as_slice()) < self.grad_tol;
        }
        Ok(OptimResult {
            grad_norm: inf_norm(g.as_slice()),
            x: x.as_slice().to_vec(),
            value: fx,
            iterations,
            converged,
            trace,
        })
    }
}

/// Central-difference gradient, used to validate analytic gradients.
pub fn numerical_gradient<F: FnMut(&[f64]) -> f64>(mut f: F, x: &[f64], h: f64) -> Vec<f64> {
    let mut p = x.to_vec();
    (0..x.len())
        .map(|i| {
            let hi = h * x[i].abs().max(1.0);
            p[i] = x[i] + hi;
            let fp = f(&p);
            p[i] = x[i] - hi;
            let fm = f(&p);
            p[i] = x[i];
            (fp - fm) / (2.0 * hi)
        })
        .collect()
}
