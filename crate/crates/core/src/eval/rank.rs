//! Ranking classifiers over samples: Friedman test and Nemenyi post-hoc
//! critical difference.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::{Error, Result};

/// Ranks within each row, 1 = smallest, ties get their average rank.
pub fn rank_errors(errors: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    errors
        .iter()
        .map(|row| {
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::domain("rank_errors needs finite errors"));
            }
            let mut idx: Vec<usize> = (0..row.len()).collect();
            idx.sort_by(|&a, &b| row[a].total_cmp(&row[b]));
            let mut ranks = vec![0.0; row.len()];
            let mut i = 0;
            while i < idx.len() {
                let mut j = i;
                while j + 1 < idx.len() && row[idx[j + 1]] == row[idx[i]] {
                    j += 1;
                }
                let avg = (i + j) as f64 / 2.0 + 1.0;
                for &p in &idx[i..=j] {
                    ranks[p] = avg;
                }
                i = j + 1;
            }
            Ok(ranks)
        })
        .collect()
}

fn shape(ranks: &[Vec<f64>]) -> Result<(usize, usize)> {
    let n = ranks.len();
    let k = ranks.first().map_or(0, Vec::len);
    if n < 2 || k < 2 {
        return Err(Error::domain("rank tests need at least 2 samples and 2 classifiers"));
    }
    if ranks.iter().any(|r| r.len() != k) {
        return Err(Error::domain("rank table is ragged"));
    }
    Ok((n, k))
}

pub fn mean_ranks(ranks: &[Vec<f64>]) -> Vec<f64> {
    let n = ranks.len() as f64;
    let k = ranks.first().map_or(0, Vec::len);
    (0..k).map(|j| ranks.iter().map(|r| r[j]).sum::<f64>() / n).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FriedmanResult {
    pub statistic: f64,
    pub p_value: f64,
    pub mean_ranks: Vec<f64>,
}

/// `12n / (K(K+1)) * (sum_j Rbar_j^2 - K(K+1)^2/4)`, chi-square with K - 1
/// degrees of freedom. No tie correction.
pub fn friedman_test(ranks: &[Vec<f64>]) -> Result<FriedmanResult> {
    let (n, k) = shape(ranks)?;
    let mean = mean_ranks(ranks);
    let (nf, kf) = (n as f64, k as f64);
    let sum_sq: f64 = mean.iter().map(|r| r * r).sum();
    let statistic = (12.0 * nf / (kf * (kf + 1.0)) * (sum_sq - kf * (kf + 1.0).powi(2) / 4.0)).max(0.0);
    let chi = ChiSquared::new(kf - 1.0).map_err(|e| Error::numerical(e.to_string()))?;
    let p_value = if statistic == 0.0 { 1.0 } else { chi.sf(statistic) };
    Ok(FriedmanResult {
        statistic,
        p_value,
        mean_ranks: mean,
    })
}

/// Two-tailed Nemenyi critical values `q_alpha` for K = 2..=20 classifiers:
/// studentized range quantiles at infinite degrees of freedom divided by
/// sqrt(2).
pub const NEMENYI_Q_005: [f64; 19] = [
    1.960, 2.343, 2.569, 2.728, 2.850, 2.949, 3.031, 3.102, 3.164, 3.219, 3.268, 3.313, 3.354, 3.391, 3.426, 3.458,
    3.489, 3.517, 3.544,
];
pub const NEMENYI_Q_010: [f64; 19] = [
    1.645, 2.052, 2.291, 2.459, 2.589, 2.693, 2.780, 2.855, 2.920, 2.978, 3.030, 3.077, 3.120, 3.159, 3.196, 3.230,
    3.261, 3.291, 3.319,
];

pub fn nemenyi_q(k: usize, alpha: f64) -> Result<f64> {
    let table = if alpha == 0.05 {
        &NEMENYI_Q_005
    } else if alpha == 0.10 {
        &NEMENYI_Q_010
    } else {
        return Err(Error::domain(format!("no Nemenyi table for alpha = {alpha}; use 0.05 or 0.10")));
    };
    if !(2..=20).contains(&k) {
        return Err(Error::domain(format!("Nemenyi table covers 2 to 20 classifiers, got {k}")));
    }
    Ok(table[k - 2])
}

pub fn critical_difference(k: usize, n: usize, alpha: f64) -> Result<f64> {
    let q = nemenyi_q(k, alpha)?;
    Ok(q * (k as f64 * (k as f64 + 1.0) / (6.0 * n as f64)).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankTestResult {
    pub friedman_statistic: f64,
    pub p_value: f64,
    pub mean_ranks: Vec<f64>,
    pub alpha: f64,
    pub q_alpha: f64,
    pub critical_difference: f64,
    /// `significant[i][j]`: classifiers i and j differ by more than the CD.
    pub significant: Vec<Vec<bool>>,
    /// Classifier indices sorted by mean rank, best first.
    pub order: Vec<usize>,
    /// Maximal runs `[start, end]` (inclusive positions in `order`) of
    /// classifiers that are pairwise not significantly different.
    pub groups: Vec<(usize, usize)>,
}

pub fn nemenyi_test(ranks: &[Vec<f64>], alpha: f64) -> Result<RankTestResult> {
    let (n, k) = shape(ranks)?;
    let friedman = friedman_test(ranks)?;
    let q_alpha = nemenyi_q(k, alpha)?;
    let cd = critical_difference(k, n, alpha)?;
    let r = &friedman.mean_ranks;
    let significant: Vec<Vec<bool>> = (0..k).map(|i| (0..k).map(|j| (r[i] - r[j]).abs() > cd).collect()).collect();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| r[a].total_cmp(&r[b]).then(a.cmp(&b)));
    // In sorted order a run is mutually non-significant iff its ends are.
    let mut groups: Vec<(usize, usize)> = Vec::new();
    for start in 0..k {
        let mut end = start;
        while end + 1 < k && !significant[order[start]][order[end + 1]] {
            end += 1;
        }
        if groups.last().is_none_or(|&(_, e)| end > e) {
            groups.push((start, end));
        }
    }
    Ok(RankTestResult {
        friedman_statistic: friedman.statistic,
        p_value: friedman.p_value,
        mean_ranks: friedman.mean_ranks,
        alpha,
        q_alpha,
        critical_difference: cd,
        significant,
        order,
        groups,
    })
}
