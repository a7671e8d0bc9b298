//! Sigmoid calibration of decision values, following the Newton method with
//! backtracking and smoothed targets of Lin, Lin and Weng's note on Platt's
//! probabilistic outputs.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// `P(y = 1 | s) = 1 / (1 + exp(a * s + b))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlattCalibration {
    pub a: f64,
    pub b: f64,
}

impl PlattCalibration {
    pub fn probability(&self, score: f64) -> f64 {
        let f = score * self.a + self.b;
        if f >= 0.0 {
            let e = (-f).exp();
            e / (1.0 + e)
        } else {
            1.0 / (1.0 + f.exp())
        }
    }
}

fn targets(labels: &[bool]) -> (Vec<f64>, usize, usize) {
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    let hi = (pos as f64 + 1.0) / (pos as f64 + 2.0);
    let lo = 1.0 / (neg as f64 + 2.0);
    (labels.iter().map(|&l| if l { hi } else { lo }).collect(), pos, neg)
}

fn neg_log_likelihood(scores: &[f64], t: &[f64], a: f64, b: f64) -> f64 {
    scores
        .iter()
        .zip(t)
        .map(|(&s, &ti)| {
            let f = s * a + b;
            if f >= 0.0 {
                ti * f + (-f).exp().ln_1p()
            } else {
                (ti - 1.0) * f + f.exp().ln_1p()
            }
        })
        .sum()
}

/// Smoothed-target log-likelihood that the calibration maximizes.
pub fn platt_log_likelihood(scores: &[f64], labels: &[bool], cal: PlattCalibration) -> f64 {
    let (t, _, _) = targets(labels);
    -neg_log_likelihood(scores, &t, cal.a, cal.b)
}

pub fn platt_calibrate(scores: &[f64], labels: &[bool]) -> Result<PlattCalibration> {
    if scores.len() != labels.len() {
        return Err(Error::domain("scores and labels differ in length"));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::domain("non-finite score"));
    }
    let (t, pos, neg) = targets(labels);
    if pos == 0 || neg == 0 {
        return Err(Error::domain("Platt calibration needs both classes"));
    }
    const MAX_ITER: usize = 100;
    const MIN_STEP: f64 = 1e-10;
    const SIGMA: f64 = 1e-12;
    const EPS: f64 = 1e-5;

    let mut a = 0.0;
    let mut b = ((neg as f64 + 1.0) / (pos as f64 + 1.0)).ln();
    let mut fval = neg_log_likelihood(scores, &t, a, b);
    for _ in 0..MAX_ITER {
        let (mut h11, mut h22, mut h21, mut g1, mut g2) = (SIGMA, SIGMA, 0.0, 0.0, 0.0);
        for (&s, &ti) in scores.iter().zip(&t) {
            let f = s * a + b;
            let (p, q) = if f >= 0.0 {
                let e = (-f).exp();
                (e / (1.0 + e), 1.0 / (1.0 + e))
            } else {
                let e = f.exp();
                (1.0 / (1.0 + e), e / (1.0 + e))
            };
            let d2 = p * q;
            h11 += s * s * d2;
            h22 += d2;
            h21 += s * d2;
            let d1 = ti - p;
            g1 += s * d1;
            g2 += d1;
        }
        if g1.abs() < EPS && g2.abs() < EPS {
            break;
        }
        let det = h11 * h22 - h21 * h21;
        let da = -(h22 * g1 - h21 * g2) / det;
        let db = -(-h21 * g1 + h11 * g2) / det;
        let gd = g1 * da + g2 * db;
        let mut step = 1.0;
        while step >= MIN_STEP {
            let (na, nb) = (a + step * da, b + step * db);
            let nf = neg_log_likelihood(scores, &t, na, nb);
            if nf < fval + 1e-4 * step * gd {
                a = na;
                b = nb;
                fval = nf;
                break;
            }
            step /= 2.0;
        }
        if step < MIN_STEP {
            break;
        }
    }
    if !(a.is_finite() && b.is_finite()) {
        return Err(Error::numerical("Platt calibration diverged"));
    }
    Ok(PlattCalibration { a, b })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn symmetric_scores() {
        let s = [-1.0, -1.0, -1.0, 1.0, 1.0, 1.0];
        let y = [false, false, false, true, true, true];
        let c = platt_calibrate(&s, &y).unwrap();
        assert!(c.a < 0.0);
        assert!((c.probability(1.0) - (1.0 - c.probability(-1.0))).abs() < 1e-6);
    }

    #[test]
    fn monotone_in_score() {
        let s = [-2.0, -0.3, 0.1, 0.4, -1.0, 1.5, 0.2, 2.2];
        let y = [false, false, true, true, false, true, false, true];
        let c = platt_calibrate(&s, &y).unwrap();
        let grid: Vec<f64> = (-30..=30).map(|i| i as f64 / 10.0).collect();
        let p: Vec<f64> = grid.iter().map(|&v| c.probability(v)).collect();
        assert!(p.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn optimum_beats_grid() {
        let s = [-2.0, -1.1, -0.3, 0.1, 0.4, -1.0, 1.5, 0.2, 2.2, 0.9, -0.2, 1.1];
        let y = [false, false, true, true, false, false, true, false, true, true, false, true];
        let c = platt_calibrate(&s, &y).unwrap();
        let best = platt_log_likelihood(&s, &y, c);
        for i in 0..20 {
            for j in 0..20 {
                let cand = PlattCalibration {
                    a: -6.0 + 6.5 * i as f64 / 19.0,
                    b: -3.0 + 6.0 * j as f64 / 19.0,
                };
                assert!(best >= platt_log_likelihood(&s, &y, cand) - 1e-9);
            }
        }
    }

    #[test]
    fn single_class_is_an_error() {
        assert!(platt_calibrate(&[1.0, 2.0], &[true, true]).is_err());
    }
}
