use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Two-way random-effects, absolute-agreement, single-rater ICC with the
/// ANOVA mean squares it was computed from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IccResult {
    pub icc: f64,
    pub cases: usize,
    pub raters: usize,
    /// Between-cases mean square.
    pub ms_rows: f64,
    /// Between-raters mean square.
    pub ms_cols: f64,
    pub ms_error: f64,
}

/// ICC(A,1) of a cases x raters matrix:
/// `(MSR - MSE) / (MSR + (k-1) MSE + k/n (MSC - MSE))`.
pub fn icc_two_way_agreement(ratings: &[Vec<f64>]) -> Result<IccResult> {
    let n = ratings.len();
    let k = ratings.first().map_or(0, Vec::len);
    if n < 2 || k < 2 {
        return Err(Error::domain("ICC needs at least 2 cases and 2 raters"));
    }
    if ratings.iter().any(|r| r.len() != k) {
        return Err(Error::domain("ICC ratings matrix is ragged"));
    }
    if ratings.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::domain("ICC ratings must be finite"));
    }
    let (nf, kf) = (n as f64, k as f64);
    let grand = ratings.iter().flatten().sum::<f64>() / (nf * kf);
    let row_means: Vec<f64> = ratings.iter().map(|r| r.iter().sum::<f64>() / kf).collect();
    let col_means: Vec<f64> = (0..k).map(|j| ratings.iter().map(|r| r[j]).sum::<f64>() / nf).collect();
    let ss_total: f64 = ratings.iter().flatten().map(|v| (v - grand).powi(2)).sum();
    let ss_rows = kf * row_means.iter().map(|m| (m - grand).powi(2)).sum::<f64>();
    let ss_cols = nf * col_means.iter().map(|m| (m - grand).powi(2)).sum::<f64>();
    let ss_error = (ss_total - ss_rows - ss_cols).max(0.0);
    let ms_rows = ss_rows / (nf - 1.0);
    let ms_cols = ss_cols / (kf - 1.0);
    let ms_error = ss_error / ((nf - 1.0) * (kf - 1.0));
    let icc = if ss_total == 0.0 {
        1.0
    } else {
        let den = ms_rows + (kf - 1.0) * ms_error + kf / nf * (ms_cols - ms_error);
        if den <= 0.0 {
            return Err(Error::numerical("ICC undefined: non-positive denominator"));
        }
        (ms_rows - ms_error) / den
    };
    Ok(IccResult {
        icc,
        cases: n,
        raters: k,
        ms_rows,
        ms_cols,
        ms_error,
    })
}

/// ICC of two paired series.
pub fn icc_pair(a: &[f64], b: &[f64]) -> Result<IccResult> {
    if a.len() != b.len() {
        return Err(Error::domain("ICC series differ in length"));
    }
    let m: Vec<Vec<f64>> = a.iter().zip(b).map(|(&x, &y)| vec![x, y]).collect();
    icc_two_way_agreement(&m)
}
