//! Soft-margin support vector classification.
//!
//! Two solvers target the same dual problem
//!
//! ```text
//! min 1/2 a'Qa - sum(a)   s.t.  0 <= a_i <= C,  y'a = 0,   Q_ij = y_i y_j K(x_i, x_j)
//! ```
//!
//! `Smo` is the general-kernel decomposition method with second-order
//! working-set selection and a row cache. `Linear` keeps the primal weight
//! vector explicitly so every gradient costs O(d) instead of O(n d).

use std::collections::HashMap;
use std::rc::Rc;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::logistic::sigmoid;
use super::matrix::{dot, sq_dist, Matrix};
use super::platt::{platt_calibrate, PlattCalibration};
use super::ProbabilisticModel;
use crate::{seed, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Kernel {
    Linear,
    Rbf { gamma: f64 },
}

impl Kernel {
    pub fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        match *self {
            Kernel::Linear => dot(a, b),
            Kernel::Rbf { gamma } => (-gamma * sq_dist(a, b)).exp(),
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            Kernel::Rbf { gamma } if !(gamma > 0.0 && gamma.is_finite()) => {
                Err(Error::domain(format!("rbf gamma must be positive, got {gamma}")))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SvmSolver {
    /// `Linear` for the linear kernel, `Smo` otherwise.
    Auto,
    Smo,
    Linear,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvmParams {
    pub kernel: Kernel,
    pub c: f64,
    /// Stopping tolerance on the maximal KKT violation.
    pub tol: f64,
    pub solver: SvmSolver,
    /// Fit a Platt sigmoid on out-of-fold decision values.
    pub calibrate: bool,
    pub seed: u64,
}

impl SvmParams {
    pub fn new(kernel: Kernel, c: f64) -> Self {
        SvmParams {
            kernel,
            c,
            tol: 1e-4,
            solver: SvmSolver::Auto,
            calibrate: true,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SvmDualSolution {
    pub alpha: Vec<f64>,
    /// Decision function is `sum_i alpha_i y_i K(x_i, x) - rho`.
    pub rho: f64,
    /// Value of the (minimized) dual objective.
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvmModel {
    pub kernel: Kernel,
    pub c: f64,
    /// Collapsed primal weights, present for the linear kernel.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<f64>>,
    /// Support vectors with coefficients `alpha_i y_i` (nonlinear kernels).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub support_vectors: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub coefficients: Vec<f64>,
    pub bias: f64,
    pub dim: usize,
    pub calibration: Option<PlattCalibration>,
}

impl SvmModel {
    pub fn decision(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim {
            return Err(Error::domain(format!(
                "feature dimension {} != model dimension {}",
                x.len(),
                self.dim
            )));
        }
        let s = match &self.weights {
            Some(w) => dot(w, x),
            None => self
                .support_vectors
                .iter()
                .zip(&self.coefficients)
                .map(|(sv, c)| c * self.kernel.eval(sv, x))
                .sum(),
        };
        Ok(s + self.bias)
    }
}

impl ProbabilisticModel for SvmModel {
    /// Calibrated probability, or the logistic of the raw decision value when
    /// the model is uncalibrated.
    fn predict_proba(&self, x: &[f64]) -> Result<f64> {
        let s = self.decision(x)?;
        Ok(match &self.calibration {
            Some(c) => c.probability(s),
            None => sigmoid(s),
        })
    }
}

const TAU: f64 = 1e-12;
const CACHE_BYTES: usize = 256 << 20;

/// Row cache of kernel values with least-recently-used eviction.
struct KernelRows<'a> {
    x: &'a Matrix,
    kernel: Kernel,
    rows: HashMap<usize, (Rc<Vec<f64>>, u64)>,
    capacity: usize,
    clock: u64,
}

impl<'a> KernelRows<'a> {
    fn new(x: &'a Matrix, kernel: Kernel) -> Self {
        let n = x.rows().max(1);
        KernelRows {
            x,
            kernel,
            rows: HashMap::new(),
            capacity: (CACHE_BYTES / (8 * n)).max(2),
            clock: 0,
        }
    }

    fn row(&mut self, i: usize) -> Rc<Vec<f64>> {
        self.clock += 1;
        let clock = self.clock;
        if let Some(entry) = self.rows.get_mut(&i) {
            entry.1 = clock;
            return entry.0.clone();
        }
        if self.rows.len() >= self.capacity {
            let oldest = self
                .rows
                .iter()
                .min_by_key(|(_, (_, t))| *t)
                .map(|(k, _)| *k)
                .expect("cache is non-empty");
            self.rows.remove(&oldest);
        }
        let xi = self.x.row(i);
        let row: Vec<f64> = self.x.iter_rows().map(|xj| self.kernel.eval(xi, xj)).collect();
        let row = Rc::new(row);
        self.rows.insert(i, (row.clone(), clock));
        row
    }
}

fn check_problem(x: &Matrix, y: &[bool], c: f64) -> Result<()> {
    if y.len() != x.rows() {
        return Err(Error::domain("label count does not match instance count"));
    }
    if !(c > 0.0 && c.is_finite()) {
        return Err(Error::domain(format!("C must be positive, got {c}")));
    }
    if !x.all_finite() {
        return Err(Error::domain("non-finite feature value"));
    }
    if !(y.iter().any(|&v| v) && y.iter().any(|&v| !v)) {
        return Err(Error::domain("SVM needs both classes"));
    }
    Ok(())
}

#[inline]
fn sign(b: bool) -> f64 {
    if b {
        1.0
    } else {
        -1.0
    }
}

/// Solves the dual problem to the given KKT tolerance.
pub fn solve_svm_dual(
    x: &Matrix,
    y: &[bool],
    kernel: Kernel,
    c: f64,
    tol: f64,
    solver: SvmSolver,
) -> Result<SvmDualSolution> {
    check_problem(x, y, c)?;
    kernel.validate()?;
    let ys: Vec<f64> = y.iter().map(|&b| sign(b)).collect();
    let sol = match (solver, kernel) {
        (SvmSolver::Auto, Kernel::Linear) | (SvmSolver::Linear, Kernel::Linear) => {
            solve_linear(x, &ys, c, tol)
        }
        (SvmSolver::Linear, _) => {
            return Err(Error::domain("the linear solver requires the linear kernel"))
        }
        _ => solve_smo(x, &ys, kernel, c, tol),
    };
    if !sol.rho.is_finite() || sol.alpha.iter().any(|a| !a.is_finite()) {
        return Err(Error::numerical("SVM dual solution is not finite"));
    }
    if !sol.converged {
        log::warn!(
            "SVM solver stopped after {} iterations before reaching tolerance {tol:e}",
            sol.iterations
        );
    }
    Ok(sol)
}

#[inline]
fn is_up(y: f64, a: f64, c: f64) -> bool {
    (y > 0.0 && a < c) || (y < 0.0 && a > 0.0)
}

#[inline]
fn is_low(y: f64, a: f64, c: f64) -> bool {
    (y > 0.0 && a > 0.0) || (y < 0.0 && a < c)
}

/// Analytic two-variable update; `qij` is `Q_ij`, gradients are current.
#[allow(clippy::too_many_arguments)]
fn pair_update(
    yi: f64,
    yj: f64,
    ai: f64,
    aj: f64,
    gi: f64,
    gj: f64,
    qii: f64,
    qjj: f64,
    qij: f64,
    c: f64,
) -> (f64, f64) {
    let (mut ni, mut nj);
    if yi != yj {
        let mut quad = qii + qjj + 2.0 * qij;
        if quad <= 0.0 {
            quad = TAU;
        }
        let delta = (-gi - gj) / quad;
        let diff = ai - aj;
        ni = ai + delta;
        nj = aj + delta;
        if diff > 0.0 {
            if nj < 0.0 {
                nj = 0.0;
                ni = diff;
            }
        } else if ni < 0.0 {
            ni = 0.0;
            nj = -diff;
        }
        if diff > 0.0 {
            if ni > c {
                ni = c;
                nj = c - diff;
            }
        } else if nj > c {
            nj = c;
            ni = c + diff;
        }
    } else {
        let mut quad = qii + qjj - 2.0 * qij;
        if quad <= 0.0 {
            quad = TAU;
        }
        let delta = (gi - gj) / quad;
        let sum = ai + aj;
        ni = ai - delta;
        nj = aj + delta;
        if sum > c {
            if ni > c {
                ni = c;
                nj = sum - c;
            }
        } else if nj < 0.0 {
            nj = 0.0;
            ni = sum;
        }
        if sum > c {
            if nj > c {
                nj = c;
                ni = sum - c;
            }
        } else if ni < 0.0 {
            ni = 0.0;
            nj = sum;
        }
    }
    (ni, nj)
}

fn rho_from_gradient(ys: &[f64], alpha: &[f64], g: &[f64], c: f64) -> f64 {
    let (mut ub, mut lb) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut sum_free, mut nr_free) = (0.0, 0usize);
    for ((&y, &a), &gt) in ys.iter().zip(alpha).zip(g) {
        let yg = y * gt;
        if a >= c {
            if y < 0.0 {
                ub = ub.min(yg)
            } else {
                lb = lb.max(yg)
            }
        } else if a <= 0.0 {
            if y > 0.0 {
                ub = ub.min(yg)
            } else {
                lb = lb.max(yg)
            }
        } else {
            nr_free += 1;
            sum_free += yg;
        }
    }
    if nr_free > 0 {
        sum_free / nr_free as f64
    } else {
        (ub + lb) / 2.0
    }
}

fn dual_objective(alpha: &[f64], g: &[f64]) -> f64 {
    alpha.iter().zip(g).map(|(a, gt)| a * (gt - 1.0)).sum::<f64>() / 2.0
}

fn solve_smo(x: &Matrix, ys: &[f64], kernel: Kernel, c: f64, tol: f64) -> SvmDualSolution {
    let n = x.rows();
    let mut cache = KernelRows::new(x, kernel);
    let qd: Vec<f64> = x.iter_rows().map(|r| kernel.eval(r, r)).collect();
    let mut alpha = vec![0.0; n];
    let mut g = vec![-1.0; n];
    let max_iter = (100 * n).max(10_000_000);
    let mut iter = 0;
    let mut converged = false;
    while iter < max_iter {
        // first index: maximal violation among I_up
        let mut gmax = f64::NEG_INFINITY;
        let mut i = usize::MAX;
        for t in 0..n {
            if is_up(ys[t], alpha[t], c) {
                let v = -ys[t] * g[t];
                if v >= gmax {
                    gmax = v;
                    i = t;
                }
            }
        }
        if i == usize::MAX {
            converged = true;
            break;
        }
        let ki = cache.row(i);
        let mut gmax2 = f64::NEG_INFINITY;
        let mut j = usize::MAX;
        let mut best = f64::INFINITY;
        for t in 0..n {
            if !is_low(ys[t], alpha[t], c) {
                continue;
            }
            let v = ys[t] * g[t];
            if v >= gmax2 {
                gmax2 = v;
            }
            let diff = gmax + v;
            if diff > 0.0 {
                let mut quad = qd[i] + qd[t] - 2.0 * ki[t];
                if quad <= 0.0 {
                    quad = TAU;
                }
                let obj = -(diff * diff) / quad;
                if obj <= best {
                    best = obj;
                    j = t;
                }
            }
        }
        if gmax + gmax2 < tol || j == usize::MAX {
            converged = true;
            break;
        }
        iter += 1;
        let kj = cache.row(j);
        let qij = ys[i] * ys[j] * ki[j];
        let (ni, nj) = pair_update(ys[i], ys[j], alpha[i], alpha[j], g[i], g[j], qd[i], qd[j], qij, c);
        let (di, dj) = (ni - alpha[i], nj - alpha[j]);
        alpha[i] = ni;
        alpha[j] = nj;
        let (si, sj) = (ys[i] * di, ys[j] * dj);
        for t in 0..n {
            g[t] += ys[t] * (si * ki[t] + sj * kj[t]);
        }
    }
    let rho = rho_from_gradient(ys, &alpha, &g, c);
    SvmDualSolution {
        objective: dual_objective(&alpha, &g),
        alpha,
        rho,
        iterations: iter,
        converged,
    }
}

const CANDIDATES: usize = 32;
const MAX_EPOCHS: usize = 200;
const MAX_OUTER: usize = 100;
const MAX_INNER_EPOCHS: usize = 1000;
/// Coordinate visits allowed per instance across all subproblems.
const VISITS_PER_INSTANCE: usize = 400;

/// Linear kernel: the equality constraint is moved into an augmented
/// Lagrangian so each subproblem is box-constrained and solved by dual
/// coordinate descent with shrinking. Large `C` is reached through a
/// sequence of warm-started problems with growing `C`. The result is then
/// projected back onto `y'a = 0` and polished with exact pair updates.
fn solve_linear(x: &Matrix, ys: &[f64], c: f64, tol: f64) -> SvmDualSolution {
    let (n, d) = (x.rows(), x.cols());
    let sq: Vec<f64> = x.iter_rows().map(|r| dot(r, r)).collect();
    let mut st = AugState {
        alpha: vec![0.0; n],
        w: vec![0.0; d],
        beta: 0.0,
        penalty: (sq.iter().sum::<f64>() / n as f64).max(1.0),
        budget: VISITS_PER_INSTANCE * n + 1_000_000,
        updates: 0,
    };
    let mut rng = seed::rng(seed::derive(n as u64, &[d as u64]));

    let mut stages = vec![c];
    while *stages.last().expect("non-empty") > 1.0 {
        let next = stages.last().expect("non-empty") / 10.0;
        stages.push(next);
    }
    stages.reverse();
    let mut prev = stages[0];
    for (k, &ck) in stages.iter().enumerate() {
        if k > 0 {
            let scale = ck / prev;
            st.alpha.iter_mut().for_each(|a| *a = (*a * scale).min(ck));
            st.w.iter_mut().for_each(|v| *v = 0.0);
            for (i, &a) in st.alpha.iter().enumerate() {
                if a > 0.0 {
                    for (wk, xv) in st.w.iter_mut().zip(x.row(i)) {
                        *wk += a * ys[i] * xv;
                    }
                }
            }
        }
        let stage_tol = if k + 1 == stages.len() { tol } else { (tol * 100.0).max(1e-2) };
        augmented_cd(x, ys, &sq, ck, stage_tol, &mut st, &mut rng);
        prev = ck;
    }

    let AugState {
        mut alpha, updates, ..
    } = st;
    project_feasible(&mut alpha, ys, c);
    let mut w = vec![0.0; d];
    for (i, &a) in alpha.iter().enumerate() {
        if a > 0.0 {
            for (wk, xv) in w.iter_mut().zip(x.row(i)) {
                *wk += a * ys[i] * xv;
            }
        }
    }
    let (converged, polish) = polish_pairs(x, ys, &sq, c, tol, &mut alpha, &mut w, &mut rng);
    let g: Vec<f64> = (0..n).map(|t| ys[t] * dot(&w, x.row(t)) - 1.0).collect();
    let rho = rho_from_gradient(ys, &alpha, &g, c);
    SvmDualSolution {
        objective: dual_objective(&alpha, &g),
        alpha,
        rho,
        iterations: updates + polish,
        converged,
    }
}

struct AugState {
    alpha: Vec<f64>,
    w: Vec<f64>,
    beta: f64,
    penalty: f64,
    budget: usize,
    updates: usize,
}

/// Method of multipliers on `1/2 a'Qa - sum(a) + beta y'a + penalty/2 (y'a)^2`.
fn augmented_cd(
    x: &Matrix,
    ys: &[f64],
    sq: &[f64],
    c: f64,
    tol: f64,
    st: &mut AugState,
    rng: &mut rand_chacha::ChaCha8Rng,
) {
    let n = x.rows();
    let penalty = st.penalty;
    let mut s: f64 = st.alpha.iter().zip(ys).map(|(a, y)| a * y).sum();
    let mut g = vec![0.0; n];
    for _ in 0..MAX_OUTER {
        if st.budget == 0 {
            break;
        }
        let mut active: Vec<usize> = (0..n).collect();
        let (mut pg_max_old, mut pg_min_old) = (f64::INFINITY, f64::NEG_INFINITY);
        for _ in 0..MAX_INNER_EPOCHS {
            active.shuffle(rng);
            let (mut pg_max, mut pg_min) = (f64::NEG_INFINITY, f64::INFINITY);
            let mut k = 0;
            st.budget = st.budget.saturating_sub(active.len());
            while k < active.len() {
                let i = active[k];
                let xi = x.row(i);
                let gi = ys[i] * (dot(&st.w, xi) + st.beta + penalty * s) - 1.0;
                let ai = st.alpha[i];
                let mut pg = 0.0;
                if ai == 0.0 {
                    if gi > pg_max_old {
                        active.swap_remove(k);
                        continue;
                    }
                    if gi < 0.0 {
                        pg = gi;
                    }
                } else if ai == c {
                    if gi < pg_min_old {
                        active.swap_remove(k);
                        continue;
                    }
                    if gi > 0.0 {
                        pg = gi;
                    }
                } else {
                    pg = gi;
                }
                pg_max = pg_max.max(pg);
                pg_min = pg_min.min(pg);
                if pg.abs() > 1e-12 {
                    let new = (ai - gi / (sq[i] + penalty)).clamp(0.0, c);
                    let delta = (new - ai) * ys[i];
                    st.alpha[i] = new;
                    s += delta;
                    for (wk, xv) in st.w.iter_mut().zip(xi) {
                        *wk += delta * xv;
                    }
                    st.updates += 1;
                }
                k += 1;
            }
            if pg_max - pg_min <= tol * 0.5 {
                if active.len() == n {
                    break;
                }
                active = (0..n).collect();
                pg_max_old = f64::INFINITY;
                pg_min_old = f64::NEG_INFINITY;
                continue;
            }
            if st.budget == 0 {
                break;
            }
            pg_max_old = if pg_max > 0.0 { pg_max } else { f64::INFINITY };
            pg_min_old = if pg_min < 0.0 { pg_min } else { f64::NEG_INFINITY };
        }
        // recompute the constraint sum to shed accumulated rounding
        s = st.alpha.iter().zip(ys).map(|(a, y)| a * y).sum();
        st.beta += penalty * s;
        for t in 0..n {
            g[t] = ys[t] * dot(&st.w, x.row(t)) - 1.0;
        }
        if kkt_gap(ys, &st.alpha, &g, c) < tol && s.abs() < 1e-9 * c.max(1.0) {
            break;
        }
    }
}

fn kkt_gap(ys: &[f64], alpha: &[f64], g: &[f64], c: f64) -> f64 {
    let (mut m, mut big_m) = (f64::NEG_INFINITY, f64::INFINITY);
    for t in 0..ys.len() {
        let v = -ys[t] * g[t];
        if is_up(ys[t], alpha[t], c) {
            m = m.max(v);
        }
        if is_low(ys[t], alpha[t], c) {
            big_m = big_m.min(v);
        }
    }
    m - big_m
}

/// Moves the smallest possible mass so that `y'a = 0` holds exactly.
fn project_feasible(alpha: &mut [f64], ys: &[f64], c: f64) {
    let s: f64 = alpha.iter().zip(ys).map(|(a, y)| a * y).sum();
    if s == 0.0 {
        return;
    }
    // shrink the side that carries the excess
    let side = s.signum();
    let mut excess = s.abs();
    for (a, &y) in alpha.iter_mut().zip(ys) {
        if excess <= 0.0 {
            break;
        }
        if y == side && *a > 0.0 {
            let take = a.min(excess);
            *a -= take;
            excess -= take;
        }
    }
    // rounding can leave a residue; push it onto the other side
    let s: f64 = alpha.iter().zip(ys).map(|(a, y)| a * y).sum();
    if s != 0.0 {
        let side = -s.signum();
        for (a, &y) in alpha.iter_mut().zip(ys) {
            if y == side && *a + s.abs() <= c {
                *a += s.abs();
                break;
            }
        }
    }
}

/// Exact two-variable updates with the primal weights maintained. Each
/// epoch checks the full KKT gap, then pairs every violating index with the
/// best of a short list of strongly violating partners.
#[allow(clippy::too_many_arguments)]
fn polish_pairs(
    x: &Matrix,
    ys: &[f64],
    sq: &[f64],
    c: f64,
    tol: f64,
    alpha: &mut [f64],
    w: &mut [f64],
    rng: &mut rand_chacha::ChaCha8Rng,
) -> (bool, usize) {
    let n = x.rows();
    let mut g = vec![0.0; n];
    let mut order: Vec<usize> = (0..n).collect();
    let mut updates = 0;
    let grad = |w: &[f64], t: usize| ys[t] * dot(w, x.row(t)) - 1.0;
    let apply = |alpha: &mut [f64], w: &mut [f64], i: usize, j: usize, gi: f64, gj: f64| -> bool {
        let qij = ys[i] * ys[j] * dot(x.row(i), x.row(j));
        let (ni, nj) = pair_update(ys[i], ys[j], alpha[i], alpha[j], gi, gj, sq[i], sq[j], qij, c);
        let (di, dj) = (ni - alpha[i], nj - alpha[j]);
        if di == 0.0 && dj == 0.0 {
            return false;
        }
        alpha[i] = ni;
        alpha[j] = nj;
        let (si, sj) = (ys[i] * di, ys[j] * dj);
        for ((wk, xi), xj) in w.iter_mut().zip(x.row(i)).zip(x.row(j)) {
            *wk += si * xi + sj * xj;
        }
        true
    };

    for _ in 0..MAX_EPOCHS {
        for t in 0..n {
            g[t] = grad(w, t);
        }
        let mut up: Vec<(f64, usize)> = Vec::new();
        let mut low: Vec<(f64, usize)> = Vec::new();
        for t in 0..n {
            let v = -ys[t] * g[t];
            if is_up(ys[t], alpha[t], c) {
                up.push((v, t));
            }
            if is_low(ys[t], alpha[t], c) {
                low.push((v, t));
            }
        }
        let m = up.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
        let big_m = low.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
        if up.is_empty() || low.is_empty() || m - big_m < tol {
            return (true, updates);
        }
        up.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        low.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let up_c: Vec<usize> = up.iter().take(CANDIDATES).map(|p| p.1).collect();
        let low_c: Vec<usize> = low.iter().take(CANDIDATES).map(|p| p.1).collect();

        let i0 = up_c[0];
        if let Some(j0) = best_partner(x, ys, alpha, w, sq, i0, g[i0], &low_c, true, c, tol) {
            let gj = grad(w, j0);
            if apply(alpha, w, i0, j0, g[i0], gj) {
                updates += 1;
            }
        }

        order.shuffle(rng);
        for &t in &order {
            let gt = grad(w, t);
            let v = -ys[t] * gt;
            let pair = if is_up(ys[t], alpha[t], c) && v > big_m + tol {
                best_partner(x, ys, alpha, w, sq, t, gt, &low_c, true, c, tol).map(|j| (t, j))
            } else if is_low(ys[t], alpha[t], c) && v < m - tol {
                best_partner(x, ys, alpha, w, sq, t, gt, &up_c, false, c, tol).map(|i| (i, t))
            } else {
                None
            };
            if let Some((i, j)) = pair {
                let (gi, gj) = (grad(w, i), grad(w, j));
                if apply(alpha, w, i, j, gi, gj) {
                    updates += 1;
                }
            }
        }
    }
    (false, updates)
}

/// Chooses, among `candidates`, the partner of `t` with the largest
/// second-order decrease. With `t_is_up` the partner comes from I_low.
#[allow(clippy::too_many_arguments)]
fn best_partner(
    x: &Matrix,
    ys: &[f64],
    alpha: &[f64],
    w: &[f64],
    sq: &[f64],
    t: usize,
    gt: f64,
    candidates: &[usize],
    t_is_up: bool,
    c: f64,
    tol: f64,
) -> Option<usize> {
    let vt = -ys[t] * gt;
    let xt = x.row(t);
    let mut best = (f64::INFINITY, None);
    for &s in candidates {
        if s == t {
            continue;
        }
        let eligible = if t_is_up {
            is_low(ys[s], alpha[s], c)
        } else {
            is_up(ys[s], alpha[s], c)
        };
        if !eligible {
            continue;
        }
        let vs = -ys[s] * (ys[s] * dot(w, x.row(s)) - 1.0);
        let diff = if t_is_up { vt - vs } else { vs - vt };
        if diff <= tol * 0.5 {
            continue;
        }
        let mut quad = sq[t] + sq[s] - 2.0 * dot(xt, x.row(s));
        if quad <= 0.0 {
            quad = TAU;
        }
        let obj = -(diff * diff) / quad;
        if obj < best.0 {
            best = (obj, Some(s));
        }
    }
    best.1
}

fn model_from_solution(x: &Matrix, y: &[bool], kernel: Kernel, c: f64, sol: &SvmDualSolution) -> SvmModel {
    let d = x.cols();
    let mut model = SvmModel {
        kernel,
        c,
        weights: None,
        support_vectors: Vec::new(),
        coefficients: Vec::new(),
        bias: -sol.rho,
        dim: d,
        calibration: None,
    };
    match kernel {
        Kernel::Linear => {
            let mut w = vec![0.0; d];
            for (i, &a) in sol.alpha.iter().enumerate() {
                if a > 0.0 {
                    let s = a * sign(y[i]);
                    for (wk, xv) in w.iter_mut().zip(x.row(i)) {
                        *wk += s * xv;
                    }
                }
            }
            model.weights = Some(w);
        }
        Kernel::Rbf { .. } => {
            for (i, &a) in sol.alpha.iter().enumerate() {
                if a > 0.0 {
                    model.support_vectors.push(x.row(i).to_vec());
                    model.coefficients.push(a * sign(y[i]));
                }
            }
        }
    }
    model
}

fn train_uncalibrated(x: &Matrix, y: &[bool], p: &SvmParams) -> Result<SvmModel> {
    let sol = solve_svm_dual(x, y, p.kernel, p.c, p.tol, p.solver)?;
    Ok(model_from_solution(x, y, p.kernel, p.c, &sol))
}

/// Trains the classifier and, if requested, a Platt sigmoid on decision
/// values from a seeded three-fold split. When a fold's training part is
/// single-class, in-sample decision values are used instead.
pub fn fit_svm(x: &Matrix, y: &[bool], params: &SvmParams) -> Result<SvmModel> {
    check_problem(x, y, params.c)?;
    let mut model = train_uncalibrated(x, y, params)?;
    if !params.calibrate {
        return Ok(model);
    }
    let n = x.rows();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut seed::rng(seed::derive_str(params.seed, "platt-folds")));
    let mut fold = vec![0usize; n];
    for (p, &i) in idx.iter().enumerate() {
        fold[i] = p % 3;
    }
    let mut scores = vec![0.0; n];
    let mut out_of_fold = n >= 3;
    if out_of_fold {
        for f in 0..3 {
            let train: Vec<usize> = (0..n).filter(|&i| fold[i] != f).collect();
            let test: Vec<usize> = (0..n).filter(|&i| fold[i] == f).collect();
            let yt: Vec<bool> = train.iter().map(|&i| y[i]).collect();
            if !(yt.iter().any(|&v| v) && yt.iter().any(|&v| !v)) {
                out_of_fold = false;
                break;
            }
            let sub = train_uncalibrated(&x.select_rows(&train), &yt, params)?;
            for &i in &test {
                scores[i] = sub.decision(x.row(i))?;
            }
        }
    }
    if !out_of_fold {
        for (i, s) in scores.iter_mut().enumerate() {
            *s = model.decision(x.row(i))?;
        }
    }
    model.calibration = Some(platt_calibrate(&scores, y)?);
    Ok(model)
}
