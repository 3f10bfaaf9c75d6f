//! Synthetic market and holdings data.
//!
//! Returns follow a sector factor model `r_t = a + B f_t + ε_t`; users hold
//! under-diversified portfolios concentrated in a home sector. All draws come
//! from ChaCha8 seeded with `seed`, returns on stream 1 and holdings on
//! stream 2, so outputs are reproducible across platforms.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::holdings::InteractionMatrix;
use crate::market::ReturnsPanel;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_items: usize,
    pub m_users: usize,
    pub t_periods: usize,
    /// Factor 0 is a market factor loaded by every item when `k_factors > 1`;
    /// sector `s` loads factor `1 + s mod (k_factors - 1)`.
    pub k_factors: usize,
    /// Per-period stddev of factor draws.
    pub factor_vol: f64,
    /// Per-period stddev of idiosyncratic noise.
    pub idio_vol: f64,
    /// Cross-sectional stddev of per-period expected returns.
    pub mean_spread: f64,
    /// Centre of the per-period expected returns.
    pub base_mean: f64,
    /// Extra per-period expected return per unit of market loading above 1.
    pub market_premium: f64,
    pub n_sectors: usize,
    /// Inclusive (min, max) holding count per user.
    pub holdings_range: (usize, usize),
    /// Probability that a holding is drawn from the user's home sector.
    pub sector_bias: f64,
    pub seed: u64,
    pub start_year: i32,
    pub periods_per_year: u32,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_items: 300,
            m_users: 200,
            t_periods: 120,
            k_factors: 9,
            factor_vol: 0.04,
            idio_vol: 0.06,
            mean_spread: 0.002,
            base_mean: 0.008,
            market_premium: 0.01,
            n_sectors: 8,
            holdings_range: (10, 30),
            sector_bias: 0.8,
            seed: 42,
            start_year: 2001,
            periods_per_year: 12,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.n_items == 0 || self.m_users == 0 || self.t_periods == 0 {
            return bad("n_items, m_users and t_periods must be positive".into());
        }
        if self.k_factors == 0 || self.n_sectors == 0 || self.n_sectors > self.n_items {
            return bad(format!(
                "need k_factors >= 1 and 1 <= n_sectors <= n_items (got {} / {})",
                self.k_factors, self.n_sectors
            ));
        }
        for (name, v) in [
            ("factor_vol", self.factor_vol),
            ("idio_vol", self.idio_vol),
            ("mean_spread", self.mean_spread),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return bad(format!("{name} must be a nonnegative number"));
            }
        }
        if !self.base_mean.is_finite() || !self.market_premium.is_finite() {
            return bad("base_mean and market_premium must be finite".into());
        }
        let (lo, hi) = self.holdings_range;
        if lo == 0 || lo > hi || hi > self.n_items {
            return bad(format!("invalid holdings_range ({lo}, {hi}) for {} items", self.n_items));
        }
        if !(0.0..=1.0).contains(&self.sector_bias) {
            return bad("sector_bias must lie in [0, 1]".into());
        }
        if self.periods_per_year == 0 {
            return bad("periods_per_year must be positive".into());
        }
        Ok(())
    }

    /// Sector of an item: contiguous, near-equal blocks.
    pub fn sector_of(&self, item: usize) -> usize {
        item * self.n_sectors / self.n_items
    }

    pub fn item_ids(&self) -> Vec<String> {
        padded_ids('S', self.n_items)
    }

    pub fn user_ids(&self) -> Vec<String> {
        padded_ids('U', self.m_users)
    }

    /// `YYYY-MM`-style labels starting at `start_year`.
    pub fn period_labels(&self, n_periods: usize) -> Vec<String> {
        let ppy = self.periods_per_year as usize;
        (0..n_periods)
            .map(|t| format!("{}-{:02}", self.start_year + (t / ppy) as i32, t % ppy + 1))
            .collect()
    }
}

fn padded_ids(prefix: char, n: usize) -> Vec<String> {
    let width = format!("{}", n.saturating_sub(1)).len().max(4);
    (0..n).map(|k| format!("{prefix}{k:0width$}")).collect()
}

fn rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn normal(sd: f64) -> Normal<f64> {
    Normal::new(0.0, sd).expect("validated stddev")
}

/// Generates `cfg.t_periods` periods of factor-model returns.
pub fn gen_returns(cfg: &SynthConfig) -> Result<ReturnsPanel> {
    gen_returns_periods(cfg, cfg.t_periods)
}

/// Like [`gen_returns`] but with an explicit period count. The first
/// `cfg.t_periods` periods of a longer panel are not identical to a shorter
/// one; draw one panel and slice it when windows must share a history.
pub fn gen_returns_periods(cfg: &SynthConfig, n_periods: usize) -> Result<ReturnsPanel> {
    cfg.validate()?;
    let n = cfg.n_items;
    let k = cfg.k_factors;
    let mut rng = rng(cfg.seed, 1);

    let beta = Uniform::new(0.5, 1.5).expect("valid range");
    let mut loadings = DMatrix::zeros(n, k);
    for i in 0..n {
        loadings[(i, 0)] = beta.sample(&mut rng);
        if k > 1 {
            let s = cfg.sector_of(i);
            loadings[(i, 1 + s % (k - 1))] = beta.sample(&mut rng);
        }
    }
    let means: Vec<f64> = {
        let d = normal(cfg.mean_spread);
        (0..n)
            .map(|i| cfg.base_mean + cfg.market_premium * (loadings[(i, 0)] - 1.0) + d.sample(&mut rng))
            .collect()
    };

    let factor = normal(cfg.factor_vol);
    let idio = normal(cfg.idio_vol);
    let mut returns = DMatrix::zeros(n_periods, n);
    let mut f = alloc::vec![0.0; k];
    for t in 0..n_periods {
        for v in f.iter_mut() {
            *v = factor.sample(&mut rng);
        }
        for i in 0..n {
            let mut r = means[i];
            for (c, fv) in f.iter().enumerate() {
                r += loadings[(i, c)] * fv;
            }
            r += idio.sample(&mut rng);
            // simple returns cannot fall to -100%
            returns[(t, i)] = r.max(-0.99);
        }
    }
    ReturnsPanel::new(returns, cfg.period_labels(n_periods), cfg.item_ids(), cfg.periods_per_year)
}

/// Draws home-sector-biased holdings for `cfg.m_users` users.
pub fn gen_holdings(cfg: &SynthConfig) -> Result<InteractionMatrix> {
    cfg.validate()?;
    let n = cfg.n_items;
    let mut rng = rng(cfg.seed, 2);
    let sectors: Vec<Vec<usize>> = (0..cfg.n_sectors)
        .map(|s| (0..n).filter(|&i| cfg.sector_of(i) == s).collect())
        .collect();
    let (lo, hi) = cfg.holdings_range;

    let mut rows = Vec::with_capacity(cfg.m_users);
    for _ in 0..cfg.m_users {
        let home = rng.random_range(0..cfg.n_sectors);
        let count = rng.random_range(lo..=hi);
        let mut held = alloc::vec![false; n];
        let mut row = Vec::with_capacity(count);
        while row.len() < count {
            let from_home = rng.random_bool(cfg.sector_bias);
            let pool: Vec<usize> = if from_home {
                sectors[home].iter().copied().filter(|&i| !held[i]).collect()
            } else {
                Vec::new()
            };
            let pool = if pool.is_empty() {
                (0..n).filter(|&i| !held[i]).collect()
            } else {
                pool
            };
            let pick = pool[rng.random_range(0..pool.len())];
            held[pick] = true;
            row.push(pick);
        }
        rows.push(row);
    }
    InteractionMatrix::from_rows(rows, cfg.user_ids(), cfg.item_ids())
}
