//! Specific and overall agreement, prevalence and bootstrap intervals over
//! categorical rating tables.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::{seed, Error, Result};

/// Ratings per case as category indices in `0..categories`. Cases may have
/// different numbers of ratings.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RatingTable {
    categories: usize,
    cases: Vec<Vec<usize>>,
}

impl RatingTable {
    pub fn new(categories: usize, cases: Vec<Vec<usize>>) -> Result<Self> {
        if let Some(bad) = cases.iter().flatten().find(|&&c| c >= categories) {
            return Err(Error::domain(format!("category {bad} outside 0..{categories}")));
        }
        Ok(RatingTable { categories, cases })
    }

    /// One column per rater, one row per case.
    pub fn from_raters(categories: usize, raters: &[Vec<usize>]) -> Result<Self> {
        let n = raters.first().map_or(0, Vec::len);
        if raters.iter().any(|r| r.len() != n) {
            return Err(Error::domain("raters rated different numbers of cases"));
        }
        Self::new(categories, (0..n).map(|k| raters.iter().map(|r| r[k]).collect()).collect())
    }

    pub fn categories(&self) -> usize {
        self.categories
    }

    pub fn cases(&self) -> &[Vec<usize>] {
        &self.cases
    }

    pub fn len(&self) -> usize {
        self.cases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cases.is_empty()
    }

    /// `n_k`.
    pub fn ratings(&self, case: usize) -> usize {
        self.cases[case].len()
    }

    /// `n_{c,k}`.
    pub fn count(&self, case: usize, c: usize) -> usize {
        self.cases[case].iter().filter(|&&v| v == c).count()
    }

    fn resample(&self, rng: &mut impl Rng) -> RatingTable {
        let n = self.cases.len();
        RatingTable {
            categories: self.categories,
            cases: (0..n).map(|_| self.cases[rng.random_range(0..n)].clone()).collect(),
        }
    }
}

/// `sum_k n_ck (n_ck - 1) / sum_k n_ck (n_k - 1)`; `None` when no case has a
/// rating of `c` alongside another rating.
pub fn specific_agreement(table: &RatingTable, c: usize) -> Option<f64> {
    let (mut num, mut den) = (0usize, 0usize);
    for k in 0..table.len() {
        let nck = table.count(k, c);
        let nk = table.ratings(k);
        num += nck * nck.saturating_sub(1);
        den += nck * nk.saturating_sub(1);
    }
    (den > 0).then(|| num as f64 / den as f64)
}

/// `sum_{c,k} n_ck (n_ck - 1) / sum_k n_k (n_k - 1)`.
pub fn overall_agreement(table: &RatingTable) -> Result<f64> {
    if table.is_empty() {
        return Err(Error::domain("overall agreement of an empty table"));
    }
    let (mut num, mut den) = (0usize, 0usize);
    for k in 0..table.len() {
        let nk = table.ratings(k);
        if nk < 2 {
            return Err(Error::domain(format!("case {k} has {nk} rating(s); need at least 2")));
        }
        den += nk * (nk - 1);
        num += (0..table.categories())
            .map(|c| {
                let n = table.count(k, c);
                n * n.saturating_sub(1)
            })
            .sum::<usize>();
    }
    Ok(num as f64 / den as f64)
}

/// Share of all ratings that are `c`.
pub fn prevalence(table: &RatingTable, c: usize) -> Result<f64> {
    let total: usize = (0..table.len()).map(|k| table.ratings(k)).sum();
    if total == 0 {
        return Err(Error::domain("prevalence of a table without ratings"));
    }
    let hits: usize = (0..table.len()).map(|k| table.count(k, c)).sum();
    Ok(hits as f64 / total as f64)
}

pub const MIN_BOOTSTRAP: usize = 100;

/// Percentile interval of `statistic` over `n_boot` case-resampled tables.
/// Replicates where the statistic is undefined are skipped.
pub fn bootstrap_ci<F>(statistic: F, table: &RatingTable, n_boot: usize, level: f64, seed: u64) -> Result<(f64, f64)>
where
    F: Fn(&RatingTable) -> Option<f64> + Sync,
{
    if n_boot < MIN_BOOTSTRAP {
        return Err(Error::domain(format!("need at least {MIN_BOOTSTRAP} bootstrap replicates")));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::domain(format!("confidence level {level} outside (0, 1)")));
    }
    if table.is_empty() {
        return Err(Error::domain("bootstrap of an empty table"));
    }
    let mut values: Vec<f64> = (0..n_boot)
        .into_par_iter()
        .filter_map(|b| {
            let mut rng = seed::rng(seed::derive(seed, &[b as u64]));
            statistic(&table.resample(&mut rng))
        })
        .collect();
    let skipped = n_boot - values.len();
    if skipped * 10 > n_boot {
        log::warn!("bootstrap: statistic undefined on {skipped} of {n_boot} replicates");
    }
    if values.is_empty() {
        return Err(Error::domain("statistic undefined on every bootstrap replicate"));
    }
    values.sort_by(f64::total_cmp);
    let tail = (1.0 - level) / 2.0;
    Ok((quantile(&values, tail), quantile(&values, 1.0 - tail)))
}

/// Linear interpolation between order statistics.
pub(crate) fn quantile(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}
