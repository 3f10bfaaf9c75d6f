//! Return panels and the market's first two moments.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::num::sqrt;
use crate::{Error, Result};

/// T×n matrix of simple per-period returns.
#[derive(Debug, Clone, PartialEq)]
pub struct ReturnsPanel {
    returns: DMatrix<f64>,
    period_labels: Vec<String>,
    item_ids: Vec<String>,
    periods_per_year: u32,
}

impl ReturnsPanel {
    /// `returns` is periods × items. Every entry must be finite and > -1.
    pub fn new(
        returns: DMatrix<f64>,
        period_labels: Vec<String>,
        item_ids: Vec<String>,
        periods_per_year: u32,
    ) -> Result<Self> {
        if periods_per_year == 0 {
            return Err(Error::InvalidData("periods_per_year must be positive".into()));
        }
        if returns.ncols() == 0 {
            return Err(Error::InvalidData("panel has no items".into()));
        }
        if period_labels.len() != returns.nrows() {
            return Err(Error::InvalidData(format!(
                "{} period labels for {} periods",
                period_labels.len(),
                returns.nrows()
            )));
        }
        if item_ids.len() != returns.ncols() {
            return Err(Error::InvalidData(format!(
                "{} item ids for {} items",
                item_ids.len(),
                returns.ncols()
            )));
        }
        for t in 0..returns.nrows() {
            for i in 0..returns.ncols() {
                let r = returns[(t, i)];
                if !r.is_finite() {
                    return Err(Error::InvalidData(format!(
                        "non-finite return for item {} in period {}",
                        item_ids[i], period_labels[t]
                    )));
                }
                if r <= -1.0 {
                    return Err(Error::InvalidData(format!(
                        "return {r} <= -1 for item {} in period {}",
                        item_ids[i], period_labels[t]
                    )));
                }
            }
        }
        Ok(Self {
            returns,
            period_labels,
            item_ids,
            periods_per_year,
        })
    }

    pub fn returns(&self) -> &DMatrix<f64> {
        &self.returns
    }

    pub fn n_periods(&self) -> usize {
        self.returns.nrows()
    }

    pub fn n_items(&self) -> usize {
        self.returns.ncols()
    }

    pub fn period_labels(&self) -> &[String] {
        &self.period_labels
    }

    pub fn item_ids(&self) -> &[String] {
        &self.item_ids
    }

    pub fn periods_per_year(&self) -> u32 {
        self.periods_per_year
    }

    /// Sub-panel over the given periods (in the given order) and items.
    pub fn select(&self, periods: &[usize], items: &[usize]) -> Result<Self> {
        for &t in periods {
            if t >= self.n_periods() {
                return Err(Error::IndexOutOfRange { index: t, len: self.n_periods() });
            }
        }
        for &i in items {
            if i >= self.n_items() {
                return Err(Error::IndexOutOfRange { index: i, len: self.n_items() });
            }
        }
        let returns = DMatrix::from_fn(periods.len(), items.len(), |r, c| {
            self.returns[(periods[r], items[c])]
        });
        Ok(Self {
            returns,
            period_labels: periods.iter().map(|&t| self.period_labels[t].clone()).collect(),
            item_ids: items.iter().map(|&i| self.item_ids[i].clone()).collect(),
            periods_per_year: self.periods_per_year,
        })
    }

    /// Contiguous range of periods, all items.
    pub fn periods(&self, range: core::ops::Range<usize>) -> Result<Self> {
        let periods: Vec<usize> = range.collect();
        let items: Vec<usize> = (0..self.n_items()).collect();
        self.select(&periods, &items)
    }
}

/// Calendar year encoded in a period label: the leading run of digits
/// (`"2015-03"` and `"2015"` both give 2015).
pub fn period_year(label: &str) -> Option<i32> {
    let digits: String = label.chars().take_while(|c| c.is_ascii_digit()).collect();
    if digits.is_empty() {
        None
    } else {
        digits.parse().ok()
    }
}

/// Diagonal loading added to the sample covariance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "value")]
pub enum Loading {
    /// Add this value to every diagonal entry.
    Absolute(f64),
    /// Add this multiple of the mean sample variance.
    Relative(f64),
}

impl Default for Loading {
    fn default() -> Self {
        Loading::Relative(1e-6)
    }
}

/// Expected returns and covariance of the item universe.
#[derive(Debug, Clone, PartialEq)]
pub struct MarketStats {
    mu: DVector<f64>,
    sigma: DMatrix<f64>,
}

impl MarketStats {
    /// Validates symmetry (1e-12 absolute), non-negative variances and
    /// positive semidefiniteness (eigenvalues >= -1e-9 * trace / n).
    pub fn new(mu: DVector<f64>, sigma: DMatrix<f64>) -> Result<Self> {
        let n = mu.len();
        if n == 0 {
            return Err(Error::InvalidData("empty mean vector".into()));
        }
        if sigma.nrows() != n || sigma.ncols() != n {
            return Err(Error::InvalidData(format!(
                "covariance is {}x{} for {} items",
                sigma.nrows(),
                sigma.ncols(),
                n
            )));
        }
        if mu.iter().chain(sigma.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidData("non-finite moments".into()));
        }
        for i in 0..n {
            if sigma[(i, i)] < 0.0 {
                return Err(Error::InvalidData(format!("negative variance for item {i}")));
            }
            for j in (i + 1)..n {
                if (sigma[(i, j)] - sigma[(j, i)]).abs() > 1e-12 {
                    return Err(Error::InvalidData(format!(
                        "covariance not symmetric at ({i}, {j})"
                    )));
                }
            }
        }
        let trace = sigma.trace();
        let floor = -1e-9 * trace / n as f64;
        let eig = sigma.clone().symmetric_eigenvalues();
        if let Some(min) = eig.iter().copied().reduce(f64::min) {
            if min < floor {
                return Err(Error::InvalidData(format!(
                    "covariance not positive semidefinite (min eigenvalue {min:e})"
                )));
            }
        }
        Ok(Self { mu, sigma })
    }

    pub fn mu(&self) -> &DVector<f64> {
        &self.mu
    }

    pub fn sigma(&self) -> &DMatrix<f64> {
        &self.sigma
    }

    pub fn n_items(&self) -> usize {
        self.mu.len()
    }

    pub fn variance(&self, i: usize) -> f64 {
        self.sigma[(i, i)]
    }

    /// Moments restricted to `items`, in that order.
    pub fn subset(&self, items: &[usize]) -> Result<Self> {
        for &i in items {
            if i >= self.n_items() {
                return Err(Error::IndexOutOfRange { index: i, len: self.n_items() });
            }
        }
        let mu = DVector::from_iterator(items.len(), items.iter().map(|&i| self.mu[i]));
        let sigma = DMatrix::from_fn(items.len(), items.len(), |a, b| {
            self.sigma[(items[a], items[b])]
        });
        Ok(Self { mu, sigma })
    }

    /// Portfolio mean `μᵀw`.
    pub fn portfolio_mean(&self, weights: &[f64]) -> f64 {
        weights.iter().zip(self.mu.iter()).map(|(w, m)| w * m).sum()
    }

    /// Portfolio variance `wᵀΣw`.
    pub fn portfolio_variance(&self, weights: &[f64]) -> f64 {
        let n = self.n_items();
        let mut total = 0.0;
        for i in 0..n {
            if weights[i] == 0.0 {
                continue;
            }
            let mut row = 0.0;
            for j in 0..n {
                row += self.sigma[(i, j)] * weights[j];
            }
            total += weights[i] * row;
        }
        total
    }

    /// Return correlation of items `i` and `j`.
    pub fn correlation(&self, i: usize, j: usize) -> Result<f64> {
        let n = self.n_items();
        for idx in [i, j] {
            if idx >= n {
                return Err(Error::IndexOutOfRange { index: idx, len: n });
            }
            if self.sigma[(idx, idx)] <= 0.0 {
                return Err(Error::UndefinedCorrelation { item: idx });
            }
        }
        if i == j {
            return Ok(1.0);
        }
        Ok(self.sigma[(i, j)] / sqrt(self.sigma[(i, i)] * self.sigma[(j, j)]))
    }
}

/// Sample mean and unbiased sample covariance of a panel, optionally scaled
/// by `periods_per_year`, plus diagonal loading.
pub fn estimate_moments(panel: &ReturnsPanel, annualize: bool, loading: Loading) -> Result<MarketStats> {
    let t = panel.n_periods();
    if t < 2 {
        return Err(Error::MomentsUndefined { periods: t });
    }
    let n = panel.n_items();
    let r = panel.returns();
    let scale = if annualize { panel.periods_per_year() as f64 } else { 1.0 };

    let mean: Vec<f64> = (0..n)
        .map(|i| r.column(i).iter().sum::<f64>() / t as f64)
        .collect();
    let centered = DMatrix::from_fn(t, n, |p, i| r[(p, i)] - mean[i]);

    let mut sigma = DMatrix::zeros(n, n);
    for i in 0..n {
        let ci = centered.column(i);
        for j in i..n {
            let cj = centered.column(j);
            let mut acc = 0.0;
            for p in 0..t {
                acc += ci[p] * cj[p];
            }
            let v = acc / (t - 1) as f64 * scale;
            sigma[(i, j)] = v;
            sigma[(j, i)] = v;
        }
    }
    let load = match loading {
        Loading::Absolute(v) => v,
        Loading::Relative(f) => f * sigma.trace() / n as f64,
    };
    if !(load >= 0.0) || !load.is_finite() {
        return Err(Error::InvalidData(format!("invalid diagonal loading {load}")));
    }
    for i in 0..n {
        sigma[(i, i)] += load;
    }
    let mu = DVector::from_iterator(n, mean.iter().map(|m| m * scale));
    MarketStats::new(mu, sigma)
}

/// `μᵀw / √(wᵀΣw)`. No risk-free rate is deducted.
pub fn sharpe_ratio(weights: &[f64], stats: &MarketStats) -> Result<f64> {
    if weights.len() != stats.n_items() {
        return Err(Error::InvalidData(format!(
            "{} weights for {} items",
            weights.len(),
            stats.n_items()
        )));
    }
    if weights.iter().all(|&w| w == 0.0) {
        return Err(Error::InvalidData("all portfolio weights are zero".into()));
    }
    let var = stats.portfolio_variance(weights);
    if !(var > 0.0) {
        return Err(Error::ZeroRisk);
    }
    Ok(stats.portfolio_mean(weights) / sqrt(var))
}

/// Correlation distance `√(1 − ρ_ij)`, clamped to `[0, √2]`.
pub fn dissimilarity(stats: &MarketStats, i: usize, j: usize) -> Result<f64> {
    let rho = stats.correlation(i, j)?;
    if i == j {
        return Ok(0.0);
    }
    Ok(sqrt((1.0 - rho).clamp(0.0, 2.0)))
}
