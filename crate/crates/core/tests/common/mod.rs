#![allow(dead_code)]

use std::collections::BTreeMap;

use mvecf_core::holdings::{build_yearly, MomentOptions};
use mvecf_core::synth::{gen_holdings, gen_returns_periods, SynthConfig};
use mvecf_core::{InteractionMatrix, MarketStats, SubDataset};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Every user holds at least one item and at least one item stays unheld.
pub fn random_train(m: usize, n: usize, density: f64, rng: &mut impl Rng) -> InteractionMatrix {
    let rows = (0..m)
        .map(|_| {
            let mut row: Vec<usize> = (0..n).filter(|_| rng.random_bool(density)).collect();
            if row.is_empty() {
                row.push(rng.random_range(0..n));
            }
            if row.len() == n {
                row.pop();
            }
            row
        })
        .collect();
    InteractionMatrix::from_index_rows(rows, n).unwrap()
}

/// Random moments with a strictly positive definite covariance.
pub fn random_stats(n: usize, rng: &mut impl Rng) -> MarketStats {
    let k = n + 2;
    let a = DMatrix::from_fn(n, k, |_, _| rng.random_range(-0.1..0.1));
    let mut sigma = &a * a.transpose() / k as f64;
    for i in 0..n {
        sigma[(i, i)] += 1e-3;
    }
    let sigma = (&sigma + sigma.transpose()) * 0.5;
    let mu = DVector::from_fn(n, |_, _| rng.random_range(-0.05..0.15));
    MarketStats::new(mu, sigma).unwrap()
}

pub fn diag_stats(mu: &[f64], var: &[f64]) -> MarketStats {
    MarketStats::new(DVector::from_column_slice(mu), DMatrix::from_diagonal(&DVector::from_column_slice(var))).unwrap()
}

/// The default synthetic market: ten estimation years and five ex-post years.
pub fn synthetic_dataset(cfg: &SynthConfig) -> SubDataset {
    let ppy = cfg.periods_per_year as usize;
    let panel = gen_returns_periods(cfg, cfg.t_periods + 5 * ppy).unwrap();
    let holdings = gen_holdings(cfg).unwrap();
    let est_years = (cfg.t_periods / ppy) as u32;
    let year = cfg.start_year + est_years as i32 - 1;
    let moments = MomentOptions { annualize: true, ..MomentOptions::default() };
    build_yearly(&BTreeMap::from([(year, holdings)]), &panel, year, est_years, 5, moments, 0).unwrap()
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}
