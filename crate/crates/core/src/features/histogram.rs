use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Per-channel histogram bin edges placed at the `k / B` quantiles of a
/// training pool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantileEdges {
    pub bins: usize,
    /// One list of `bins - 1` non-decreasing edges per channel.
    pub edges: Vec<Vec<f64>>,
}

/// Quantile by linear interpolation between order statistics of sorted data.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Fits edges for each channel from its pooled samples.
pub fn fit_quantile_edges(samples: &[Vec<f64>], bins: usize) -> Result<QuantileEdges> {
    if bins < 2 {
        return Err(Error::domain(format!("need at least 2 bins, got {bins}")));
    }
    let mut edges = Vec::with_capacity(samples.len());
    for (c, s) in samples.iter().enumerate() {
        if s.len() < bins {
            return Err(Error::domain(format!(
                "channel {c}: {} samples is fewer than {bins} bins",
                s.len()
            )));
        }
        if s.iter().any(|v| !v.is_finite()) {
            return Err(Error::domain(format!("channel {c}: non-finite sample")));
        }
        let mut sorted = s.clone();
        sorted.sort_by(f64::total_cmp);
        let mut e: Vec<f64> = (1..bins).map(|k| quantile_sorted(&sorted, k as f64 / bins as f64)).collect();
        // interpolation rounding must not break monotonicity
        for k in 1..e.len() {
            if e[k] < e[k - 1] {
                e[k] = e[k - 1];
            }
        }
        edges.push(e);
    }
    Ok(QuantileEdges { bins, edges })
}

/// Bin of `v`: bin 0 is `(-inf, e_1]`, bin `k` is `(e_k, e_{k+1}]`, the last
/// bin is `(e_{B-1}, inf)`.
#[inline]
pub fn bin_index(edges: &[f64], v: f64) -> usize {
    edges.partition_point(|&e| e < v)
}

/// L1-normalized histogram of `values`.
pub fn histogram(values: &[f64], edges: &[f64]) -> Vec<f64> {
    let mut h = vec![0.0; edges.len() + 1];
    for &v in values {
        h[bin_index(edges, v)] += 1.0;
    }
    let n = values.len() as f64;
    if n > 0.0 {
        h.iter_mut().for_each(|c| *c /= n);
    }
    h
}
