use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::matrix::{sq_dist, Matrix};
use crate::{seed, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KMeansInit {
    PlusPlus,
    /// Repeatedly split the cluster with the largest within-cluster sum of
    /// squares in two.
    Bisecting,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KMeansModel {
    pub centroids: Vec<Vec<f64>>,
}

impl KMeansModel {
    pub fn k(&self) -> usize {
        self.centroids.len()
    }

    /// Nearest centroid; ties go to the lowest index.
    pub fn assign(&self, x: &[f64]) -> Result<usize> {
        let d = self.centroids.first().map_or(0, |c| c.len());
        if x.len() != d {
            return Err(Error::domain(format!(
                "feature dimension {} != centroid dimension {d}",
                x.len()
            )));
        }
        Ok(nearest(&self.centroids, x).0)
    }
}

#[derive(Debug, Clone)]
pub struct KMeansReport {
    pub model: KMeansModel,
    pub assignments: Vec<usize>,
    /// Inertia after each assignment step.
    pub inertia: Vec<f64>,
}

fn nearest(centroids: &[Vec<f64>], x: &[f64]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centroids.iter().enumerate() {
        let d = sq_dist(c, x);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

fn plus_plus(x: &Matrix, idx: &[usize], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let first = idx[rng.random_range(0..idx.len())];
    let mut centroids = vec![x.row(first).to_vec()];
    let mut chosen = vec![first];
    let mut d2: Vec<f64> = idx.iter().map(|&i| sq_dist(x.row(i), x.row(first))).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut pick = idx.len() - 1;
            for (p, &w) in d2.iter().enumerate() {
                if u < w {
                    pick = p;
                    break;
                }
                u -= w;
            }
            // never land on a zero-weight point because of rounding
            while d2[pick] == 0.0 {
                pick = (pick + idx.len() - 1) % idx.len();
            }
            pick
        } else {
            // all remaining points coincide with a centroid
            (0..idx.len()).find(|p| !chosen.contains(&idx[*p])).unwrap_or(0)
        };
        let i = idx[pick];
        chosen.push(i);
        let c = x.row(i).to_vec();
        for (p, &j) in idx.iter().enumerate() {
            d2[p] = d2[p].min(sq_dist(x.row(j), &c));
        }
        centroids.push(c);
    }
    centroids
}

fn lloyd(
    x: &Matrix,
    idx: &[usize],
    mut centroids: Vec<Vec<f64>>,
    iters: usize,
) -> (Vec<Vec<f64>>, Vec<usize>, Vec<f64>) {
    let k = centroids.len();
    let d = x.cols();
    let mut assign = vec![usize::MAX; idx.len()];
    let mut trace = Vec::new();
    for it in 0..iters.max(1) {
        let near: Vec<(usize, f64)> = idx.par_iter().map(|&i| nearest(&centroids, x.row(i))).collect();
        let mut inertia = 0.0;
        let mut changed = false;
        for (p, &(j, dist)) in near.iter().enumerate() {
            inertia += dist;
            if assign[p] != j {
                assign[p] = j;
                changed = true;
            }
        }
        trace.push(inertia);
        if (!changed && it > 0) || it + 1 == iters.max(1) {
            break;
        }
        let mut sums = vec![vec![0.0; d]; k];
        let mut counts = vec![0usize; k];
        for (p, &i) in idx.iter().enumerate() {
            counts[assign[p]] += 1;
            for (s, v) in sums[assign[p]].iter_mut().zip(x.row(i)) {
                *s += v;
            }
        }
        for j in 0..k {
            if counts[j] > 0 {
                centroids[j] = sums[j].iter().map(|s| s / counts[j] as f64).collect();
            }
        }
    }
    (centroids, assign, trace)
}

fn bisecting(x: &Matrix, k: usize, iters: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let all: Vec<usize> = (0..x.rows()).collect();
    let mut clusters: Vec<(Vec<usize>, Vec<f64>, f64)> = vec![summarize(x, all)];
    while clusters.len() < k {
        let target = clusters
            .iter()
            .enumerate()
            .filter(|(_, c)| c.0.len() >= 2)
            .max_by(|a, b| a.1 .2.total_cmp(&b.1 .2).then(b.0.cmp(&a.0)))
            .map(|(j, _)| j)
            .expect("k <= number of points");
        let (members, _, sse) = clusters.swap_remove(target);
        let (left, right) = if sse > 0.0 {
            let init = plus_plus(x, &members, 2, rng);
            let (_, assign, _) = lloyd(x, &members, init, iters);
            let mut parts = (Vec::new(), Vec::new());
            for (p, &i) in members.iter().enumerate() {
                if assign[p] == 0 {
                    parts.0.push(i)
                } else {
                    parts.1.push(i)
                }
            }
            parts
        } else {
            (members[..1].to_vec(), members[1..].to_vec())
        };
        if left.is_empty() || right.is_empty() {
            let mut m = if left.is_empty() { right } else { left };
            let tail = m.split_off(1);
            clusters.push(summarize(x, m));
            clusters.push(summarize(x, tail));
        } else {
            clusters.push(summarize(x, left));
            clusters.push(summarize(x, right));
        }
    }
    clusters.sort_by_key(|c| c.0[0]);
    clusters.into_iter().map(|c| c.1).collect()
}

fn summarize(x: &Matrix, members: Vec<usize>) -> (Vec<usize>, Vec<f64>, f64) {
    let mut c = vec![0.0; x.cols()];
    for &i in &members {
        for (s, v) in c.iter_mut().zip(x.row(i)) {
            *s += v;
        }
    }
    c.iter_mut().for_each(|s| *s /= members.len() as f64);
    let sse = members.iter().map(|&i| sq_dist(x.row(i), &c)).sum();
    (members, c, sse)
}

/// Lloyd's algorithm for `iters` iterations (or until assignments settle).
pub fn kmeans(x: &Matrix, k: usize, iters: usize, init: KMeansInit, seed: u64) -> Result<KMeansReport> {
    if k == 0 {
        return Err(Error::domain("k must be at least 1"));
    }
    if k > x.rows() {
        return Err(Error::domain(format!("k = {k} exceeds {} points", x.rows())));
    }
    if !x.all_finite() {
        return Err(Error::domain("non-finite feature value"));
    }
    let mut rng = seed::rng(seed);
    let all: Vec<usize> = (0..x.rows()).collect();
    let start = match init {
        KMeansInit::PlusPlus => plus_plus(x, &all, k, &mut rng),
        KMeansInit::Bisecting => bisecting(x, k, iters, &mut rng),
    };
    let (centroids, assignments, inertia) = lloyd(x, &all, start, iters);
    Ok(KMeansReport {
        model: KMeansModel { centroids },
        assignments,
        inertia,
    })
}
