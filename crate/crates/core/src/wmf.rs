//! Weighted matrix factorization trained by alternating least squares.
//!
//! The solver works against any [`RatingTarget`], i.e. any per-entry
//! (target, confidence) assignment, so the restructured MVECF objective in
//! [`crate::mvecf`] reuses it unchanged. Confidence is handled fully dense:
//! one user solve costs `O(n·l² + l³)`.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::holdings::InteractionMatrix;
use crate::num::sqrt;
use crate::par::map_indices;
use crate::{Error, Result};

/// Hyperparameters shared by WMF and both MVECF variants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Hyperparams {
    /// Latent dimension `l`.
    pub latent_dim: usize,
    /// L2 weight `λ` on both embedding matrices.
    pub lambda_reg: f64,
    /// Confidence for held pairs (`y = 1`).
    pub c_pos: f64,
    /// Confidence for unheld pairs (`y = 0`).
    pub c_neg: f64,
    /// Weight of the mean-variance term.
    pub lambda_mv: f64,
    /// Risk aversion.
    pub gamma: f64,
    /// Gradient-descent learning rate.
    pub alpha: f64,
    /// ALS sweeps or gradient-descent epochs.
    pub max_iters: usize,
    /// Stop when the relative loss change over one sweep drops below this.
    pub tol: f64,
    pub seed: u64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            latent_dim: 30,
            lambda_reg: 0.001,
            c_pos: 10.0,
            c_neg: 1.0,
            lambda_mv: 10.0,
            gamma: 3.0,
            alpha: 0.001,
            max_iters: 30,
            tol: 1e-6,
            seed: 0,
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::InvalidConfig(m.into()));
        if self.latent_dim == 0 {
            return fail("latent_dim must be >= 1");
        }
        if !(self.lambda_reg >= 0.0) {
            return fail("lambda_reg must be >= 0");
        }
        if !(self.c_neg > 0.0 && self.c_pos > self.c_neg) || !self.c_pos.is_finite() {
            return fail("confidences must satisfy c_pos > c_neg > 0");
        }
        if !(self.lambda_mv >= 0.0) || !self.lambda_mv.is_finite() {
            return fail("lambda_mv must be >= 0");
        }
        if !(self.gamma > 0.0) {
            return fail("gamma must be > 0");
        }
        if !(self.alpha > 0.0) {
            return fail("alpha must be > 0");
        }
        if !(self.tol >= 0.0) {
            return fail("tol must be >= 0");
        }
        Ok(())
    }

    /// Confidence of a pair given whether it is held.
    pub fn confidence(&self, held: bool) -> f64 {
        if held {
            self.c_pos
        } else {
            self.c_neg
        }
    }
}

/// User embeddings `P` (m×l) and item embeddings `Q` (n×l).
#[derive(Debug, Clone, PartialEq)]
pub struct FactorModel {
    users: DMatrix<f64>,
    items: DMatrix<f64>,
}

impl FactorModel {
    pub fn new(users: DMatrix<f64>, items: DMatrix<f64>) -> Result<Self> {
        if users.ncols() != items.ncols() {
            return Err(Error::InvalidData(format!(
                "latent dimensions differ: {} vs {}",
                users.ncols(),
                items.ncols()
            )));
        }
        if users.iter().chain(items.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidData("non-finite embedding".into()));
        }
        Ok(Self { users, items })
    }

    /// Entries i.i.d. normal with stddev `0.1/√l`; users drawn first.
    pub fn random(n_users: usize, n_items: usize, latent_dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = Normal::new(0.0, 0.1 / sqrt(latent_dim as f64)).expect("positive stddev");
        // fill row by row so the layout of the draw sequence is explicit
        let mut users = DMatrix::zeros(n_users, latent_dim);
        for u in 0..n_users {
            for k in 0..latent_dim {
                users[(u, k)] = d.sample(&mut rng);
            }
        }
        let mut items = DMatrix::zeros(n_items, latent_dim);
        for i in 0..n_items {
            for k in 0..latent_dim {
                items[(i, k)] = d.sample(&mut rng);
            }
        }
        Self { users, items }
    }

    pub fn users(&self) -> &DMatrix<f64> {
        &self.users
    }

    pub fn items(&self) -> &DMatrix<f64> {
        &self.items
    }

    pub fn users_mut(&mut self) -> &mut DMatrix<f64> {
        &mut self.users
    }

    pub fn items_mut(&mut self) -> &mut DMatrix<f64> {
        &mut self.items
    }

    pub fn n_users(&self) -> usize {
        self.users.nrows()
    }

    pub fn n_items(&self) -> usize {
        self.items.nrows()
    }

    pub fn latent_dim(&self) -> usize {
        self.users.ncols()
    }

    /// `p_u · q_i`.
    pub fn rating(&self, u: usize, i: usize) -> f64 {
        let l = self.latent_dim();
        let mut s = 0.0;
        for k in 0..l {
            s += self.users[(u, k)] * self.items[(i, k)];
        }
        s
    }

    /// Row `u` of `PQᵀ`.
    pub fn predict(&self, u: usize) -> Result<Vec<f64>> {
        if u >= self.n_users() {
            return Err(Error::IndexOutOfRange { index: u, len: self.n_users() });
        }
        Ok(self.user_ratings(u))
    }

    pub(crate) fn user_ratings(&self, u: usize) -> Vec<f64> {
        (0..self.n_items()).map(|i| self.rating(u, i)).collect()
    }

    /// `‖P‖² + ‖Q‖²`.
    pub fn squared_norm(&self) -> f64 {
        self.users.norm_squared() + self.items.norm_squared()
    }
}

/// Per-entry (target, confidence) pairs, produced one row or column at a time.
pub trait RatingTarget: Sync {
    fn n_users(&self) -> usize;
    fn n_items(&self) -> usize;
    /// Fills `target[i]`, `confidence[i]` for every item `i` of user `u`.
    fn user_row(&self, u: usize, target: &mut [f64], confidence: &mut [f64]);
    /// Fills `target[u]`, `confidence[u]` for every user `u` of item `i`.
    fn item_column(&self, i: usize, target: &mut [f64], confidence: &mut [f64]);
    /// Optional additive structure of the confidences, used by ALS to share
    /// the dense part of the normal equations between rows.
    fn confidence_structure(&self) -> Option<ConfidenceStructure<'_>> {
        None
    }
}

/// Confidences of the form `c_ui = user_part[u] + item_part[i]` for every
/// pair outside `support`; pairs in `support` may take any value.
#[derive(Debug, Clone)]
pub struct ConfidenceStructure<'a> {
    pub user_part: Vec<f64>,
    pub item_part: Vec<f64>,
    pub support: &'a InteractionMatrix,
}

/// Binary holdings with `c_pos` / `c_neg` confidence.
#[derive(Debug, Clone, Copy)]
pub struct WmfTargets<'a> {
    train: &'a InteractionMatrix,
    c_pos: f64,
    c_neg: f64,
}

/// Targets of plain WMF: `y ∈ {0, 1}` with confidence `c_pos` / `c_neg`.
pub fn wmf_targets<'a>(train: &'a InteractionMatrix, hyper: &Hyperparams) -> WmfTargets<'a> {
    WmfTargets { train, c_pos: hyper.c_pos, c_neg: hyper.c_neg }
}

impl RatingTarget for WmfTargets<'_> {
    fn n_users(&self) -> usize {
        self.train.n_users()
    }

    fn n_items(&self) -> usize {
        self.train.n_items()
    }

    fn user_row(&self, u: usize, target: &mut [f64], confidence: &mut [f64]) {
        target.fill(0.0);
        confidence.fill(self.c_neg);
        for &i in self.train.row(u) {
            target[i] = 1.0;
            confidence[i] = self.c_pos;
        }
    }

    fn item_column(&self, i: usize, target: &mut [f64], confidence: &mut [f64]) {
        for u in 0..self.train.n_users() {
            let held = self.train.contains(u, i);
            target[u] = if held { 1.0 } else { 0.0 };
            confidence[u] = if held { self.c_pos } else { self.c_neg };
        }
    }

    fn confidence_structure(&self) -> Option<ConfidenceStructure<'_>> {
        Some(ConfidenceStructure {
            user_part: vec![0.0; self.train.n_users()],
            item_part: vec![self.c_neg; self.train.n_items()],
            support: self.train,
        })
    }
}

/// Which update produced a loss value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Init,
    Users,
    Items,
    Epoch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossPoint {
    pub epoch: usize,
    pub phase: Phase,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
}

pub type LossTrace = Vec<LossPoint>;

/// `Σ c (t − ŷ)² + λ(‖P‖² + ‖Q‖²)` for an arbitrary target.
pub fn weighted_loss<T: RatingTarget + ?Sized>(targets: &T, model: &FactorModel, lambda: f64) -> f64 {
    let n = targets.n_items();
    let per_user = map_indices(targets.n_users(), |u| {
        let mut t = vec![0.0; n];
        let mut c = vec![0.0; n];
        targets.user_row(u, &mut t, &mut c);
        let mut acc = 0.0;
        for i in 0..n {
            let e = t[i] - model.rating(u, i);
            acc += c[i] * e * e;
        }
        acc
    });
    per_user.iter().sum::<f64>() + lambda * model.squared_norm()
}

/// Held-out loss: `Σ_{(u,i) ∈ validation} c_pos (1 − ŷ_ui)²`. The MV term has
/// no per-entry restriction and is left out.
pub fn validation_loss(model: &FactorModel, validation: &InteractionMatrix, c_pos: f64) -> f64 {
    validation
        .pairs()
        .map(|(u, i)| {
            let e = 1.0 - model.rating(u, i);
            c_pos * e * e
        })
        .sum()
}

/// Precomputed dense part of the normal equations for one half-step:
/// `Σ_k c_k x_k x_kᵀ = scale · gram + weighted + Σ_{k ∈ support} δ_k x_k x_kᵀ`
/// with `gram = Σ x xᵀ`, `weighted = Σ w_k x xᵀ`, `δ_k = c_k − scale − w_k`.
struct SharedGram<'s> {
    gram: DMatrix<f64>,
    weighted: DMatrix<f64>,
    weights: &'s [f64],
}

impl<'s> SharedGram<'s> {
    fn new(basis: &DMatrix<f64>, weights: &'s [f64]) -> Self {
        let mut scaled = basis.clone();
        for (k, mut row) in scaled.row_iter_mut().enumerate() {
            row *= weights[k];
        }
        Self { gram: basis.tr_mul(basis), weighted: scaled.tr_mul(basis), weights }
    }
}

/// Solves `(Σ_k c_k x_k x_kᵀ + λI) p = Σ_k c_k t_k x_k` over the rows `x_k` of `basis`.
fn solve_row(
    basis: &DMatrix<f64>,
    target: &[f64],
    confidence: &[f64],
    lambda: f64,
    shared: Option<(&SharedGram<'_>, f64, &[usize])>,
    what: &'static str,
    index: usize,
) -> Result<DVector<f64>> {
    let l = basis.ncols();
    let mut a = DMatrix::<f64>::zeros(l, l);
    let mut b = DVector::<f64>::zeros(l);
    let mut x = vec![0.0; l];
    let mut accumulate = |a: &mut DMatrix<f64>, k: usize, c: f64| {
        for d in 0..l {
            x[d] = basis[(k, d)];
        }
        for r in 0..l {
            let cx = c * x[r];
            for s in r..l {
                a[(r, s)] += cx * x[s];
            }
        }
    };
    match shared {
        Some((g, scale, support)) => {
            for &k in support {
                accumulate(&mut a, k, confidence[k] - scale - g.weights[k]);
            }
            for r in 0..l {
                for s in r..l {
                    a[(r, s)] += scale * g.gram[(r, s)] + g.weighted[(r, s)];
                }
            }
        }
        None => {
            for k in 0..basis.nrows() {
                accumulate(&mut a, k, confidence[k]);
            }
        }
    }
    for k in 0..basis.nrows() {
        let ct = confidence[k] * target[k];
        if ct != 0.0 {
            for d in 0..l {
                b[d] += ct * basis[(k, d)];
            }
        }
    }
    for r in 0..l {
        a[(r, r)] += lambda;
        for s in 0..r {
            a[(r, s)] = a[(s, r)];
        }
    }
    let chol = Cholesky::new(a).ok_or(Error::Singular { what, index })?;
    Ok(chol.solve(&b))
}

/// Structure shared by every half-step of one fit: the additive parts and
/// the support indexed both by user and by item.
struct Structure<'a> {
    parts: ConfidenceStructure<'a>,
    by_item: Vec<Vec<usize>>,
}

impl<'a> Structure<'a> {
    fn new(parts: ConfidenceStructure<'a>) -> Self {
        let mut by_item = vec![Vec::new(); parts.item_part.len()];
        for (u, i) in parts.support.pairs() {
            by_item[i].push(u);
        }
        Self { parts, by_item }
    }
}

fn user_half_step<T: RatingTarget + ?Sized>(
    targets: &T,
    structure: Option<&Structure<'_>>,
    model: &mut FactorModel,
    lambda: f64,
) -> Result<()> {
    let n = targets.n_items();
    let items = model.items();
    let shared = structure.map(|s| SharedGram::new(items, &s.parts.item_part));
    let rows = map_indices(targets.n_users(), |u| {
        let mut t = vec![0.0; n];
        let mut c = vec![0.0; n];
        targets.user_row(u, &mut t, &mut c);
        let sh = structure
            .zip(shared.as_ref())
            .map(|(s, g)| (g, s.parts.user_part[u], s.parts.support.row(u)));
        solve_row(items, &t, &c, lambda, sh, "user", u)
    });
    for (u, row) in rows.into_iter().enumerate() {
        let row = row?;
        model.users.set_row(u, &row.transpose());
    }
    Ok(())
}

fn item_half_step<T: RatingTarget + ?Sized>(
    targets: &T,
    structure: Option<&Structure<'_>>,
    model: &mut FactorModel,
    lambda: f64,
) -> Result<()> {
    let m = targets.n_users();
    let users = model.users();
    let shared = structure.map(|s| SharedGram::new(users, &s.parts.user_part));
    let rows = map_indices(targets.n_items(), |i| {
        let mut t = vec![0.0; m];
        let mut c = vec![0.0; m];
        targets.item_column(i, &mut t, &mut c);
        let sh = structure
            .zip(shared.as_ref())
            .map(|(s, g)| (g, s.parts.item_part[i], s.by_item[i].as_slice()));
        solve_row(users, &t, &c, lambda, sh, "item", i)
    });
    for (i, row) in rows.into_iter().enumerate() {
        let row = row?;
        model.items.set_row(i, &row.transpose());
    }
    Ok(())
}

fn relative_change(prev: f64, cur: f64) -> f64 {
    (prev - cur).abs() / prev.abs().max(f64::MIN_POSITIVE)
}

/// Alternating least squares on `Σ c (t − ŷ)² + λ(‖P‖² + ‖Q‖²)`.
///
/// The trace holds the loss of the initial model and after every half-step.
/// Training stops once a full sweep changes the loss by less than
/// `hyper.tol` (relative) or after `hyper.max_iters` sweeps. Without `init`,
/// the model is drawn by [`FactorModel::random`] from `hyper.seed`.
pub fn fit_als<T: RatingTarget + ?Sized>(
    targets: &T,
    hyper: &Hyperparams,
    init: Option<FactorModel>,
    validation: Option<&InteractionMatrix>,
) -> Result<(FactorModel, LossTrace)> {
    let (m, n) = (targets.n_users(), targets.n_items());
    if m == 0 || n == 0 {
        return Err(Error::EmptyData("no users or items to factorize".into()));
    }
    let mut model = match init {
        Some(model) => {
            if model.n_users() != m || model.n_items() != n {
                return Err(Error::InvalidData(format!(
                    "initial model is {}x{}, data is {m}x{n}",
                    model.n_users(),
                    model.n_items()
                )));
            }
            model
        }
        None => FactorModel::random(m, n, hyper.latent_dim, hyper.seed),
    };
    let lambda = hyper.lambda_reg;
    let val = |model: &FactorModel| validation.map(|v| validation_loss(model, v, hyper.c_pos));
    let structure = targets.confidence_structure().map(Structure::new);
    if let Some(s) = &structure {
        let p = &s.parts;
        if p.user_part.len() != m || p.item_part.len() != n || p.support.n_users() != m || p.support.n_items() != n {
            return Err(Error::InvalidData("confidence structure does not match the targets".into()));
        }
    }

    let mut trace = Vec::with_capacity(2 * hyper.max_iters + 1);
    let mut prev = weighted_loss(targets, &model, lambda);
    trace.push(LossPoint { epoch: 0, phase: Phase::Init, train_loss: prev, val_loss: val(&model) });

    for epoch in 1..=hyper.max_iters {
        user_half_step(targets, structure.as_ref(), &mut model, lambda)?;
        let loss = weighted_loss(targets, &model, lambda);
        trace.push(LossPoint { epoch, phase: Phase::Users, train_loss: loss, val_loss: val(&model) });

        item_half_step(targets, structure.as_ref(), &mut model, lambda)?;
        let loss = weighted_loss(targets, &model, lambda);
        trace.push(LossPoint { epoch, phase: Phase::Items, train_loss: loss, val_loss: val(&model) });

        if !loss.is_finite() {
            return Err(Error::Divergence { epoch });
        }
        let change = relative_change(prev, loss);
        prev = loss;
        if change < hyper.tol {
            break;
        }
    }
    Ok((model, trace))
}

/// First-order optimizer over a loss whose gradient w.r.t. the rating
/// matrix is available row by row: `∂L/∂P = R Q + 2λP`, `∂L/∂Q = Rᵀ P + 2λQ`.
pub(crate) trait RatingGradient: Sync {
    /// Row `u` of `R = ∂(L − λ‖·‖²)/∂Ŷ` given the current ratings of `u`.
    fn rating_gradient(&self, u: usize, ratings: &[f64]) -> Vec<f64>;
    fn loss(&self, model: &FactorModel) -> f64;
}

pub(crate) fn rating_gradient_matrix<G: RatingGradient>(g: &G, model: &FactorModel) -> DMatrix<f64> {
    let n = model.n_items();
    let rows = map_indices(model.n_users(), |u| g.rating_gradient(u, &model.user_ratings(u)));
    DMatrix::from_fn(model.n_users(), n, |u, i| rows[u][i])
}

/// Full gradients `(∂L/∂P, ∂L/∂Q)`.
pub(crate) fn full_gradient<G: RatingGradient>(
    g: &G,
    model: &FactorModel,
    lambda: f64,
) -> (DMatrix<f64>, DMatrix<f64>) {
    let r = rating_gradient_matrix(g, model);
    let gp = &r * model.items() + model.users() * (2.0 * lambda);
    let gq = r.transpose() * model.users() + model.items() * (2.0 * lambda);
    (gp, gq)
}

/// Per-epoch descent: users in seeded random order, each stepping along its
/// own full gradient, then one full-gradient step on all item embeddings.
pub(crate) fn descend<G: RatingGradient>(
    g: &G,
    m: usize,
    n: usize,
    hyper: &Hyperparams,
    validation: Option<&InteractionMatrix>,
) -> Result<(FactorModel, LossTrace)> {
    if m == 0 || n == 0 {
        return Err(Error::EmptyData("no users or items to factorize".into()));
    }
    let mut model = FactorModel::random(m, n, hyper.latent_dim, hyper.seed);
    let lambda = hyper.lambda_reg;
    let alpha = hyper.alpha;
    let val = |model: &FactorModel| validation.map(|v| validation_loss(model, v, hyper.c_pos));
    let mut order_rng = ChaCha8Rng::seed_from_u64(hyper.seed);
    order_rng.set_stream(3);
    let mut order: Vec<usize> = (0..m).collect();

    let mut prev = g.loss(&model);
    let mut trace = Vec::with_capacity(hyper.max_iters + 1);
    trace.push(LossPoint { epoch: 0, phase: Phase::Init, train_loss: prev, val_loss: val(&model) });

    for epoch in 1..=hyper.max_iters {
        order.shuffle(&mut order_rng);
        // a user's gradient depends only on its own row and Q
        let grads = {
            let model = &model;
            map_indices(m, |u| {
                let r = g.rating_gradient(u, &model.user_ratings(u));
                let mut grad = model.items().tr_mul(&DVector::from_vec(r));
                grad.axpy(2.0 * lambda, &model.users().row(u).transpose(), 1.0);
                grad
            })
        };
        for &u in &order {
            let step = grads[u].transpose() * alpha;
            let new_row = model.users.row(u) - step;
            model.users.set_row(u, &new_row);
        }

        let r = rating_gradient_matrix(g, &model);
        let gq = r.transpose() * model.users() + model.items() * (2.0 * lambda);
        model.items -= gq * alpha;

        let loss = g.loss(&model);
        if !loss.is_finite() {
            return Err(Error::Divergence { epoch });
        }
        trace.push(LossPoint { epoch, phase: Phase::Epoch, train_loss: loss, val_loss: val(&model) });
        let change = relative_change(prev, loss);
        prev = loss;
        if change < hyper.tol {
            break;
        }
    }
    Ok((model, trace))
}

struct WmfGradient<'a> {
    targets: WmfTargets<'a>,
    lambda: f64,
}

impl RatingGradient for WmfGradient<'_> {
    fn rating_gradient(&self, u: usize, ratings: &[f64]) -> Vec<f64> {
        let n = ratings.len();
        let mut t = vec![0.0; n];
        let mut c = vec![0.0; n];
        self.targets.user_row(u, &mut t, &mut c);
        (0..n).map(|i| -2.0 * c[i] * (t[i] - ratings[i])).collect()
    }

    fn loss(&self, model: &FactorModel) -> f64 {
        weighted_loss(&self.targets, model, self.lambda)
    }
}

/// Plain WMF trained by the same gradient-descent schedule as the
/// regularized MVECF model.
pub fn fit_gd(
    train: &InteractionMatrix,
    hyper: &Hyperparams,
    validation: Option<&InteractionMatrix>,
) -> Result<(FactorModel, LossTrace)> {
    hyper.validate()?;
    let g = WmfGradient { targets: wmf_targets(train, hyper), lambda: hyper.lambda_reg };
    descend(&g, train.n_users(), train.n_items(), hyper, validation)
}

/// Gradients of the WMF objective with respect to `P` and `Q`.
pub fn wmf_gradient(
    model: &FactorModel,
    train: &InteractionMatrix,
    hyper: &Hyperparams,
) -> (DMatrix<f64>, DMatrix<f64>) {
    let g = WmfGradient { targets: wmf_targets(train, hyper), lambda: hyper.lambda_reg };
    full_gradient(&g, model, hyper.lambda_reg)
}
