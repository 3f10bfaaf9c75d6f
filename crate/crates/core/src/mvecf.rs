//! Mean-variance regularized collaborative filtering.
//!
//! Two trainable forms of the same idea:
//!
//! * the regularized objective
//!   `Σ c(y − ŷ)² + λ(‖P‖² + ‖Q‖²) + λ_MV Σ_u ((γ/2) ŷ_uᵀ Σ ŷ_u − μᵀ ŷ_u)`,
//!   trained by gradient descent ([`fit_mvecf_reg`]);
//! * the restructured objective where the cross-covariance term uses the
//!   user's current holdings `y_uj / h_u` instead of predictions. It equals
//!   ordinary WMF over modified ratings `ỹ` with confidences `c̃` up to a
//!   data-only constant, and is trained by ALS ([`fit_mvecf_wmf`]).
//!
//! With `S_ui = Σ_{j≠i} y_uj σ_ij` and `h_u` the number of items user `u`
//! holds:
//!
//! ```text
//! c_mv = (γ/2) λ_MV σ_i²        y_mv = (μ_i/γ − S_ui / (2 h_u)) / σ_i²
//! c̃    = c + c_mv               ỹ    = (c y + c_mv y_mv) / c̃
//! ```
//!
//! Modified ratings are produced one user row (or item column) at a time and
//! never stored as a dense m×n matrix.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::holdings::InteractionMatrix;
use crate::market::MarketStats;
use crate::par::map_indices;
use crate::wmf::{self, ConfidenceStructure, FactorModel, Hyperparams, LossTrace, RatingGradient, RatingTarget};
use crate::{Error, Result};

/// All quantities of one (user, item) pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModifiedRating {
    pub y: f64,
    pub c: f64,
    pub c_mv: f64,
    pub y_mv: f64,
    pub c_tilde: f64,
    pub y_tilde: f64,
}

/// Lazily evaluated modified ratings over a training matrix.
#[derive(Debug, Clone, Copy)]
pub struct ModifiedRatings<'a> {
    train: &'a InteractionMatrix,
    stats: &'a MarketStats,
    c_pos: f64,
    c_neg: f64,
    lambda_mv: f64,
    gamma: f64,
}

fn check_shapes(train: &InteractionMatrix, stats: &MarketStats) -> Result<()> {
    if stats.n_items() != train.n_items() {
        return Err(Error::InvalidData(format!(
            "moments cover {} items, holdings {}",
            stats.n_items(),
            train.n_items()
        )));
    }
    Ok(())
}

impl<'a> ModifiedRatings<'a> {
    /// Requires every user to hold at least one item and every item to
    /// have positive variance.
    pub fn new(train: &'a InteractionMatrix, stats: &'a MarketStats, hyper: &Hyperparams) -> Result<Self> {
        check_shapes(train, stats)?;
        if let Some(u) = (0..train.n_users()).find(|&u| train.row(u).is_empty()) {
            return Err(Error::InvalidData(format!(
                "user {} holds no training items",
                train.user_ids()[u]
            )));
        }
        if let Some(i) = (0..stats.n_items()).find(|&i| !(stats.variance(i) > 0.0)) {
            return Err(Error::InvalidData(format!(
                "item {} has zero variance",
                train.item_ids()[i]
            )));
        }
        Ok(Self {
            train,
            stats,
            c_pos: hyper.c_pos,
            c_neg: hyper.c_neg,
            lambda_mv: hyper.lambda_mv,
            gamma: hyper.gamma,
        })
    }

    /// `Σ_{j ∈ H_u, j ≠ i} σ_ij`.
    fn covariance_sum(&self, u: usize, i: usize) -> f64 {
        let sigma = self.stats.sigma();
        self.train
            .row(u)
            .iter()
            .filter(|&&j| j != i)
            .map(|&j| sigma[(i, j)])
            .sum()
    }

    pub fn pair(&self, u: usize, i: usize) -> ModifiedRating {
        let held = self.train.contains(u, i);
        let y = if held { 1.0 } else { 0.0 };
        let c = if held { self.c_pos } else { self.c_neg };
        let var = self.stats.variance(i);
        let h = self.train.row(u).len() as f64;
        let c_mv = 0.5 * self.gamma * self.lambda_mv * var;
        let y_mv = (self.stats.mu()[i] / self.gamma - 0.5 * self.covariance_sum(u, i) / h) / var;
        let c_tilde = c + c_mv;
        let y_tilde = (c * y + c_mv * y_mv) / c_tilde;
        ModifiedRating { y, c, c_mv, y_mv, c_tilde, y_tilde }
    }

    pub fn row(&self, u: usize) -> Vec<ModifiedRating> {
        (0..self.train.n_items()).map(|i| self.pair(u, i)).collect()
    }
}

impl RatingTarget for ModifiedRatings<'_> {
    fn n_users(&self) -> usize {
        self.train.n_users()
    }

    fn n_items(&self) -> usize {
        self.train.n_items()
    }

    fn user_row(&self, u: usize, target: &mut [f64], confidence: &mut [f64]) {
        for i in 0..self.train.n_items() {
            let r = self.pair(u, i);
            target[i] = r.y_tilde;
            confidence[i] = r.c_tilde;
        }
    }

    fn item_column(&self, i: usize, target: &mut [f64], confidence: &mut [f64]) {
        for u in 0..self.train.n_users() {
            let r = self.pair(u, i);
            target[u] = r.y_tilde;
            confidence[u] = r.c_tilde;
        }
    }

    // c̃ = c_neg + c_mv off the holdings
    fn confidence_structure(&self) -> Option<ConfidenceStructure<'_>> {
        let item_part = (0..self.train.n_items())
            .map(|i| self.c_neg + 0.5 * self.gamma * self.lambda_mv * self.stats.variance(i))
            .collect();
        Some(ConfidenceStructure { user_part: vec![0.0; self.train.n_users()], item_part, support: self.train })
    }
}

/// Modified ratings of user `u` for every item.
pub fn mv_ratings(
    train: &InteractionMatrix,
    stats: &MarketStats,
    hyper: &Hyperparams,
    u: usize,
) -> Result<Vec<ModifiedRating>> {
    if u >= train.n_users() {
        return Err(Error::IndexOutOfRange { index: u, len: train.n_users() });
    }
    Ok(ModifiedRatings::new(train, stats, hyper)?.row(u))
}

/// ALS on the restructured objective. The trace reports
/// `Σ c̃(ỹ − ŷ)² + λ(‖P‖² + ‖Q‖²)`.
pub fn fit_mvecf_wmf(
    train: &InteractionMatrix,
    stats: &MarketStats,
    hyper: &Hyperparams,
    validation: Option<&InteractionMatrix>,
) -> Result<(FactorModel, LossTrace)> {
    hyper.validate()?;
    let targets = ModifiedRatings::new(train, stats, hyper)?;
    wmf::fit_als(&targets, hyper, None, validation)
}

fn quad_form_row(sigma: &DMatrix<f64>, x: &[f64]) -> Vec<f64> {
    let n = x.len();
    (0..n)
        .map(|i| {
            let mut acc = 0.0;
            for j in 0..n {
                acc += sigma[(i, j)] * x[j];
            }
            acc
        })
        .collect()
}

/// The regularized objective, evaluated in matrix form per user.
pub fn loss_mv_reg(model: &FactorModel, train: &InteractionMatrix, stats: &MarketStats, hyper: &Hyperparams) -> f64 {
    let n = train.n_items();
    let per_user = map_indices(train.n_users(), |u| {
        let r = model.user_ratings(u);
        let mut fit = 0.0;
        for i in 0..n {
            let held = train.contains(u, i);
            let y = if held { 1.0 } else { 0.0 };
            let e = y - r[i];
            fit += hyper.confidence(held) * e * e;
        }
        let sr = quad_form_row(stats.sigma(), &r);
        let risk: f64 = r.iter().zip(&sr).map(|(a, b)| a * b).sum();
        let ret: f64 = r.iter().zip(stats.mu().iter()).map(|(a, b)| a * b).sum();
        fit + hyper.lambda_mv * (0.5 * hyper.gamma * risk - ret)
    });
    per_user.iter().sum::<f64>() + hyper.lambda_reg * model.squared_norm()
}

/// The restructured objective before completing the square: the
/// regularized objective with `ŷ_uj` replaced by `y_uj / h_u` inside the
/// cross-covariance term.
pub fn loss_mv_wmf_form(
    model: &FactorModel,
    train: &InteractionMatrix,
    stats: &MarketStats,
    hyper: &Hyperparams,
) -> f64 {
    let n = train.n_items();
    let sigma = stats.sigma();
    let per_user = map_indices(train.n_users(), |u| {
        let row = train.row(u);
        let h = row.len() as f64;
        let mut acc = 0.0;
        for i in 0..n {
            let r = model.rating(u, i);
            let held = train.contains(u, i);
            let y = if held { 1.0 } else { 0.0 };
            let e = y - r;
            let cross: f64 = row.iter().filter(|&&j| j != i).map(|&j| sigma[(i, j)]).sum::<f64>() / h;
            let mv = 0.5 * hyper.gamma * (r * r * sigma[(i, i)] + r * cross) - stats.mu()[i] * r;
            acc += hyper.confidence(held) * e * e + hyper.lambda_mv * mv;
        }
        acc
    });
    per_user.iter().sum::<f64>() + hyper.lambda_reg * model.squared_norm()
}

/// The data-only constant `K = Σ (c y² − c̃ ỹ²)` that separates the
/// restructured objective from its ordinary WMF form.
pub fn restructuring_constant(train: &InteractionMatrix, stats: &MarketStats, hyper: &Hyperparams) -> Result<f64> {
    let targets = ModifiedRatings::new(train, stats, hyper)?;
    let per_user = map_indices(train.n_users(), |u| {
        targets
            .row(u)
            .iter()
            .map(|r| r.c * r.y * r.y - r.c_tilde * r.y_tilde * r.y_tilde)
            .sum::<f64>()
    });
    Ok(per_user.iter().sum())
}

struct MvGradient<'a> {
    train: &'a InteractionMatrix,
    stats: &'a MarketStats,
    hyper: &'a Hyperparams,
}

impl RatingGradient for MvGradient<'_> {
    fn rating_gradient(&self, u: usize, ratings: &[f64]) -> Vec<f64> {
        let h = self.hyper;
        let sr = quad_form_row(self.stats.sigma(), ratings);
        let mut out = vec![0.0; ratings.len()];
        for i in 0..ratings.len() {
            let held = self.train.contains(u, i);
            let y = if held { 1.0 } else { 0.0 };
            out[i] = -2.0 * h.confidence(held) * (y - ratings[i])
                + h.lambda_mv * (h.gamma * sr[i] - self.stats.mu()[i]);
        }
        out
    }

    fn loss(&self, model: &FactorModel) -> f64 {
        loss_mv_reg(model, self.train, self.stats, self.hyper)
    }
}

/// Analytic gradients of [`loss_mv_reg`] with respect to `P` and `Q`.
pub fn mv_reg_gradient(
    model: &FactorModel,
    train: &InteractionMatrix,
    stats: &MarketStats,
    hyper: &Hyperparams,
) -> (DMatrix<f64>, DMatrix<f64>) {
    let g = MvGradient { train, stats, hyper };
    wmf::full_gradient(&g, model, hyper.lambda_reg)
}

/// Gradient descent on [`loss_mv_reg`]. Each epoch updates every user
/// embedding (seeded random order) along its full gradient, including the
/// coupled `γ λ_MV QᵀΣQ p_u − λ_MV Qᵀμ` term, then takes one full-gradient
/// step on the item embeddings. Train and validation loss are recorded per
/// epoch; a non-finite loss aborts with the epoch number.
pub fn fit_mvecf_reg(
    train: &InteractionMatrix,
    stats: &MarketStats,
    hyper: &Hyperparams,
    validation: Option<&InteractionMatrix>,
) -> Result<(FactorModel, LossTrace)> {
    hyper.validate()?;
    check_shapes(train, stats)?;
    let g = MvGradient { train, stats, hyper };
    wmf::descend(&g, train.n_users(), train.n_items(), hyper, validation)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DVector;

    fn two_item_stats(mu: f64) -> MarketStats {
        MarketStats::new(
            DVector::from_column_slice(&[mu, 0.05]),
            DMatrix::from_row_slice(2, 2, &[0.04, 0.02, 0.02, 0.05]),
        )
        .unwrap()
    }

    fn hyper(lambda_mv: f64, gamma: f64) -> Hyperparams {
        Hyperparams { c_pos: 10.0, c_neg: 1.0, lambda_mv, gamma, ..Hyperparams::default() }
    }

    #[test]
    fn held_pair_matches_hand_arithmetic() {
        // user holds both items; for item 0 the only other holding is item 1
        let train = InteractionMatrix::from_index_rows(alloc::vec![alloc::vec![0, 1]], 2).unwrap();
        let stats = two_item_stats(0.08);
        // h_u = 2 here, so scale the cross term accordingly: S/h = 0.02/2
        let r = mv_ratings(&train, &stats, &hyper(1.0, 2.0), 0).unwrap()[0];
        assert!((r.c_mv - 0.04).abs() < 1e-15);
        assert!((r.y_mv - (0.04 - 0.005) / 0.04).abs() < 1e-12);
    }

    #[test]
    fn single_other_holding_examples() {
        // user holds item 1 only (h_u = 1); item 0 is the pair under test
        let stats = two_item_stats(0.08);
        let h = hyper(1.0, 2.0);
        let cold = InteractionMatrix::from_index_rows(alloc::vec![alloc::vec![1]], 2).unwrap();
        let r = mv_ratings(&cold, &stats, &h, 0).unwrap()[0];
        assert!((r.c_mv - 0.04).abs() < 1e-15);
        assert!((r.y_mv - 0.75).abs() < 1e-12);
        assert!((r.c_tilde - 1.04).abs() < 1e-12);
        assert!((r.y_tilde - 0.03 / 1.04).abs() < 1e-12);
        assert!((r.y_tilde - 0.028846).abs() < 1e-6);
    }

    #[test]
    fn regularizer_off_is_identity() {
        let train = InteractionMatrix::from_index_rows(alloc::vec![alloc::vec![1], alloc::vec![0, 1]], 2).unwrap();
        let stats = two_item_stats(0.08);
        for u in 0..2 {
            for r in mv_ratings(&train, &stats, &hyper(0.0, 3.0), u).unwrap() {
                assert_eq!(r.y_tilde, r.y);
                assert_eq!(r.c_tilde, r.c);
            }
        }
    }

    #[test]
    fn zero_model_loss() {
        let train = InteractionMatrix::from_index_rows(alloc::vec![alloc::vec![1], alloc::vec![0, 1]], 2).unwrap();
        let stats = two_item_stats(0.08);
        let model = FactorModel::new(DMatrix::zeros(2, 3), DMatrix::zeros(2, 3)).unwrap();
        let loss = loss_mv_reg(&model, &train, &stats, &hyper(5.0, 3.0));
        assert!((loss - 30.0).abs() < 1e-12);
    }

    #[test]
    fn empty_user_rejected() {
        let train = InteractionMatrix::from_index_rows(alloc::vec![alloc::vec![]], 2).unwrap();
        let stats = two_item_stats(0.08);
        assert!(matches!(ModifiedRatings::new(&train, &stats, &hyper(1.0, 1.0)), Err(Error::InvalidData(_))));
    }

    #[test]
    fn large_step_diverges() {
        let train = InteractionMatrix::from_index_rows(
            alloc::vec![alloc::vec![0], alloc::vec![1], alloc::vec![0, 1]],
            2,
        )
        .unwrap();
        let stats = two_item_stats(0.08);
        let h = Hyperparams { alpha: 10.0, latent_dim: 2, max_iters: 500, tol: 0.0, ..hyper(10.0, 3.0) };
        assert!(matches!(fit_mvecf_reg(&train, &stats, &h, None), Err(Error::Divergence { .. })));
    }
}
