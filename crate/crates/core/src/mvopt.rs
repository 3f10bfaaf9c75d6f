//! Long-only mean-variance optimization on the simplex and the two-step
//! filter-then-re-rank recommender built on it.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::market::MarketStats;
use crate::{Error, Result};

/// `min (γ/2) wᵀΣw − μᵀw` over `{w : Σw = 1, w ≥ 0}` for a candidate set.
#[derive(Debug, Clone, PartialEq)]
pub struct MVProblem {
    pub candidate_items: Vec<usize>,
    pub mu: DVector<f64>,
    pub sigma: DMatrix<f64>,
    pub gamma: f64,
}

impl MVProblem {
    /// Restricts `stats` to `items` (nonempty, no duplicates).
    pub fn new(items: &[usize], stats: &MarketStats, gamma: f64) -> Result<Self> {
        if items.is_empty() {
            return Err(Error::InvalidData("empty candidate list".into()));
        }
        let mut sorted = items.to_vec();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidData("duplicate candidate items".into()));
        }
        if !(gamma > 0.0) {
            return Err(Error::InvalidConfig(format!("risk aversion must be > 0, got {gamma}")));
        }
        let sub = stats.subset(items)?;
        Ok(Self {
            candidate_items: items.to_vec(),
            mu: sub.mu().clone(),
            sigma: sub.sigma().clone(),
            gamma,
        })
    }

    /// Problem over raw moments; candidates are `0..k`.
    pub fn from_moments(mu: DVector<f64>, sigma: DMatrix<f64>, gamma: f64) -> Result<Self> {
        let stats = MarketStats::new(mu, sigma)?;
        let items: Vec<usize> = (0..stats.n_items()).collect();
        Self::new(&items, &stats, gamma)
    }

    pub fn len(&self) -> usize {
        self.mu.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mu.is_empty()
    }

    pub fn objective(&self, w: &[f64]) -> f64 {
        let w = DVector::from_column_slice(w);
        0.5 * self.gamma * (w.transpose() * &self.sigma * &w)[(0, 0)] - self.mu.dot(&w)
    }

    pub fn gradient(&self, w: &[f64]) -> Vec<f64> {
        let w = DVector::from_column_slice(w);
        let g = &self.sigma * w * self.gamma - &self.mu;
        g.iter().copied().collect()
    }

    /// Gershgorin upper bound on the largest eigenvalue of `γΣ`.
    fn lipschitz_bound(&self) -> f64 {
        let k = self.len();
        (0..k)
            .map(|i| (0..k).map(|j| self.sigma[(i, j)].abs()).sum::<f64>())
            .fold(0.0, f64::max)
            * self.gamma
    }
}

/// Euclidean projection onto the probability simplex (sort-based).
pub fn project_simplex(v: &[f64]) -> Vec<f64> {
    let mut u = v.to_vec();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (j, &uj) in u.iter().enumerate() {
        cumsum += uj;
        let t = (cumsum - 1.0) / (j + 1) as f64;
        if uj - t > 0.0 {
            theta = t;
        }
    }
    v.iter().map(|&x| (x - theta).max(0.0)).collect()
}

/// Largest violation of the simplex optimality conditions: for every `a`
/// with `w_a > 0`, `g_a − min_b g_b`.
pub fn kkt_violation(w: &[f64], grad: &[f64]) -> f64 {
    let gmin = grad.iter().copied().fold(f64::INFINITY, f64::min);
    w.iter()
        .zip(grad)
        .filter(|(wa, _)| **wa > 0.0)
        .map(|(_, g)| g - gmin)
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self { tol: 1e-9, max_iters: 200_000 }
    }
}

/// Solution with the objective after every iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct MVSolution {
    pub weights: Vec<f64>,
    pub objective_trace: Vec<f64>,
}

/// Projected gradient with exact simplex projection and fixed step `1/L`.
/// Stops once [`kkt_violation`] is at most `tol`.
pub fn solve_mv_traced(problem: &MVProblem, tol: f64, max_iters: usize) -> Result<MVSolution> {
    let k = problem.len();
    let mut w = vec![1.0 / k as f64; k];
    if k == 1 {
        return Ok(MVSolution { objective_trace: vec![problem.objective(&w)], weights: w });
    }
    let l = problem.lipschitz_bound().max(f64::MIN_POSITIVE);
    let step = 1.0 / l;
    let mut trace = vec![problem.objective(&w)];
    let mut best = (trace[0], w.clone());
    for _ in 0..max_iters {
        let g = problem.gradient(&w);
        if kkt_violation(&w, &g) <= tol {
            return Ok(MVSolution { weights: w, objective_trace: trace });
        }
        let moved: Vec<f64> = w.iter().zip(&g).map(|(wi, gi)| wi - step * gi).collect();
        w = project_simplex(&moved);
        let f = problem.objective(&w);
        trace.push(f);
        if f < best.0 {
            best = (f, w.clone());
        }
    }
    let g = problem.gradient(&w);
    if kkt_violation(&w, &g) <= tol {
        return Ok(MVSolution { weights: w, objective_trace: trace });
    }
    Err(Error::NonConvergence { iterations: max_iters, best: best.1 })
}

/// Optimal long-only weights for `problem`.
pub fn solve_mv(problem: &MVProblem, tol: f64, max_iters: usize) -> Result<Vec<f64>> {
    solve_mv_traced(problem, tol, max_iters).map(|s| s.weights)
}

/// Weights closer than this are treated as tied when re-ranking.
const WEIGHT_TIE: f64 = 1e-9;

/// Takes the `k_filter` best non-held items by `base_scores`, solves the
/// mean-variance problem over those candidates together with the user's
/// holdings, and returns the `k_out` candidates with the largest optimal
/// weight (ties by base score, then item index).
pub fn two_step_rerank(
    base_scores: &[f64],
    holdings: &[usize],
    stats: &MarketStats,
    k_filter: usize,
    k_out: usize,
    gamma: f64,
) -> Result<Vec<usize>> {
    two_step_rerank_with(base_scores, holdings, stats, k_filter, k_out, gamma, SolverOptions::default())
        .map(|ranked| ranked.into_iter().map(|(i, _)| i).collect())
}

/// [`two_step_rerank`] with explicit solver options; returns `(item, weight)`.
pub fn two_step_rerank_with(
    base_scores: &[f64],
    holdings: &[usize],
    stats: &MarketStats,
    k_filter: usize,
    k_out: usize,
    gamma: f64,
    opts: SolverOptions,
) -> Result<Vec<(usize, f64)>> {
    let n = stats.n_items();
    if base_scores.len() != n {
        return Err(Error::InvalidData(format!("{} scores for {n} items", base_scores.len())));
    }
    if k_out > k_filter {
        return Err(Error::InvalidConfig(format!("k_out {k_out} exceeds k_filter {k_filter}")));
    }
    let mut held = vec![false; n];
    for &i in holdings {
        if i >= n {
            return Err(Error::IndexOutOfRange { index: i, len: n });
        }
        held[i] = true;
    }
    let mut pool: Vec<usize> = (0..n).filter(|&i| !held[i]).collect();
    if pool.len() < k_filter {
        return Err(Error::InsufficientUniverse { user: 0, needed: k_filter, available: pool.len() });
    }
    pool.sort_by(|&a, &b| base_scores[b].total_cmp(&base_scores[a]).then(a.cmp(&b)));
    pool.truncate(k_filter);
    if k_out == 0 {
        return Ok(Vec::new());
    }

    let mut universe: Vec<usize> = holdings.to_vec();
    universe.sort_unstable();
    universe.dedup();
    let offset = universe.len();
    universe.extend_from_slice(&pool);
    let problem = MVProblem::new(&universe, stats, gamma)?;
    let w = solve_mv(&problem, opts.tol, opts.max_iters)?;

    let mut ranked: Vec<(usize, f64)> = pool.iter().enumerate().map(|(k, &i)| (i, w[offset + k])).collect();
    ranked.sort_by(|a, b| {
        if (a.1 - b.1).abs() > WEIGHT_TIE {
            b.1.total_cmp(&a.1)
        } else {
            base_scores[b.0].total_cmp(&base_scores[a.0]).then(a.0.cmp(&b.0))
        }
    });
    ranked.truncate(k_out);
    Ok(ranked)
}
