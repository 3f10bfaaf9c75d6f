//! Pairwise ranking: BPR, novelty-enhanced BPR, and mean-variance efficient
//! relabeling of positive / negative samples.

use alloc::format;
use alloc::vec::Vec;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::holdings::InteractionMatrix;
use crate::market::{dissimilarity, MarketStats};
use crate::mvecf::ModifiedRatings;
use crate::num::{exp, ln_1p, round};
use crate::par::map_indices;
use crate::wmf::{FactorModel, Hyperparams};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RankingConfig {
    pub latent_dim: usize,
    pub alpha: f64,
    pub lambda_reg: f64,
    /// Correlation-distance threshold of the restricted triple set.
    pub tau_dist: f64,
    /// Probability of drawing from the restricted triple set.
    pub beta: f64,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for RankingConfig {
    fn default() -> Self {
        Self {
            latent_dim: 30,
            alpha: 0.001,
            lambda_reg: 1e-5,
            tau_dist: 0.9,
            beta: 0.8,
            epochs: 50,
            seed: 0,
        }
    }
}

impl RankingConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::InvalidConfig(m.into()));
        if self.latent_dim == 0 {
            return fail("latent_dim must be >= 1");
        }
        if !(self.alpha > 0.0) {
            return fail("alpha must be > 0");
        }
        if !(self.lambda_reg >= 0.0) {
            return fail("lambda_reg must be >= 0");
        }
        if !(0.0..=core::f64::consts::SQRT_2).contains(&self.tau_dist) {
            return fail("tau_dist must lie in [0, sqrt(2)]");
        }
        if !(0.0..=1.0).contains(&self.beta) {
            return fail("beta must lie in [0, 1]");
        }
        Ok(())
    }
}

/// A (user, positive item, negative item) training triple.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Triple {
    pub user: usize,
    pub pos: usize,
    pub neg: usize,
    /// Drawn from the distance-restricted set.
    pub restricted: bool,
}

/// Uniform sampler over all triples `(u, i, j)` with `i` positive and `j`
/// negative for `u`.
#[derive(Debug, Clone)]
pub struct TripleSampler<'a> {
    positives: &'a InteractionMatrix,
    pairs: Vec<(usize, usize)>,
    pair_index: WeightedIndex<usize>,
}

impl<'a> TripleSampler<'a> {
    /// Users whose every item is positive cannot form a triple and are
    /// skipped with a warning.
    pub fn new(positives: &'a InteractionMatrix) -> Result<Self> {
        let n = positives.n_items();
        let mut pairs = Vec::new();
        let mut weights = Vec::new();
        let mut saturated = 0usize;
        for u in 0..positives.n_users() {
            let row = positives.row(u);
            let negatives = n - row.len();
            if negatives == 0 {
                if !row.is_empty() {
                    saturated += 1;
                }
                continue;
            }
            for &i in row {
                pairs.push((u, i));
                // weight each (u, i) by the number of j it pairs with
                weights.push(negatives);
            }
        }
        if saturated > 0 {
            log::warn!("{saturated} users hold every item and are skipped by triple sampling");
        }
        if pairs.is_empty() {
            return Err(Error::EmptyData("no (positive, negative) triples to sample".into()));
        }
        let pair_index = WeightedIndex::new(&weights).expect("positive weights");
        Ok(Self { positives, pairs, pair_index })
    }

    /// Number of usable (user, positive) pairs; one BPR epoch draws this many triples.
    pub fn n_pairs(&self) -> usize {
        self.pairs.len()
    }

    pub fn positives(&self) -> &InteractionMatrix {
        self.positives
    }

    /// One triple, uniform over the full triple set.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Triple {
        let (user, pos) = self.pairs[self.pair_index.sample(rng)];
        let row = self.positives.row(user);
        let n = self.positives.n_items();
        // j uniform over the complement of the sorted row
        let mut neg = rng.random_range(0..n - row.len());
        for &held in row {
            if held > neg {
                break;
            }
            neg += 1;
        }
        Triple { user, pos, neg, restricted: false }
    }
}

/// The distance restriction of novelty-enhanced BPR.
pub struct NoveltyFilter<D> {
    dist: D,
    tau: f64,
    beta: f64,
    available: bool,
    max_retries: usize,
}

impl<D: Fn(usize, usize) -> f64> NoveltyFilter<D> {
    /// Checks whether any triple satisfies `dist(i, j) < tau`; if none
    /// does, restricted draws fall back to plain sampling with a warning.
    pub fn new(sampler: &TripleSampler<'_>, dist: D, cfg: &RankingConfig) -> Self {
        let p = sampler.positives();
        let available = cfg.beta > 0.0
            && sampler.pairs.iter().any(|&(u, i)| {
                (0..p.n_items()).any(|j| !p.contains(u, j) && dist(i, j) < cfg.tau_dist)
            });
        if cfg.beta > 0.0 && !available {
            log::warn!(
                "no triple has item distance below {}; sampling from the full triple set",
                cfg.tau_dist
            );
        }
        Self { dist, tau: cfg.tau_dist, beta: cfg.beta, available, max_retries: 100_000 }
    }

    /// Overrides the rejection-sampling retry bound.
    pub fn with_max_retries(mut self, max_retries: usize) -> Self {
        self.max_retries = max_retries;
        self
    }

    pub fn is_available(&self) -> bool {
        self.available
    }
}

/// With probability `beta` a uniform triple with `dist(i, j) < tau`
/// (rejection sampling), otherwise a uniform triple from the full set.
pub fn sample_triple_nov<D, R>(sampler: &TripleSampler<'_>, filter: &NoveltyFilter<D>, rng: &mut R) -> Result<Triple>
where
    D: Fn(usize, usize) -> f64,
    R: Rng + ?Sized,
{
    let restricted = filter.beta > 0.0 && rng.random_bool(filter.beta);
    if !restricted || !filter.available {
        return Ok(sampler.sample(rng));
    }
    let mut last_user = 0;
    for _ in 0..filter.max_retries {
        let t = sampler.sample(rng);
        if (filter.dist)(t.pos, t.neg) < filter.tau {
            return Ok(Triple { restricted: true, ..t });
        }
        last_user = t.user;
    }
    Err(Error::SamplingStarvation { user: last_user })
}

/// `−ln σ(ŷ_ui − ŷ_uj)`.
pub fn bpr_triple_loss(model: &FactorModel, user: usize, pos: usize, neg: usize) -> f64 {
    softplus(-(model.rating(user, pos) - model.rating(user, neg)))
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + ln_1p(exp(-x))
    } else {
        ln_1p(exp(x))
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + exp(-x))
    } else {
        let e = exp(x);
        e / (1.0 + e)
    }
}

fn sgd_step(model: &mut FactorModel, t: Triple, cfg: &RankingConfig) -> f64 {
    let x = model.rating(t.user, t.pos) - model.rating(t.user, t.neg);
    let g = sigmoid(-x);
    let (a, lam) = (cfg.alpha, cfg.lambda_reg);
    for k in 0..model.latent_dim() {
        let pu = model.users()[(t.user, k)];
        let qi = model.items()[(t.pos, k)];
        let qj = model.items()[(t.neg, k)];
        model.users_mut()[(t.user, k)] += a * (g * (qi - qj) - lam * pu);
        model.items_mut()[(t.pos, k)] += a * (g * pu - lam * qi);
        model.items_mut()[(t.neg, k)] += a * (-g * pu - lam * qj);
    }
    softplus(-x)
}

/// Trained model and the mean triple loss of every epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct BprFit {
    pub model: FactorModel,
    pub epoch_loss: Vec<f64>,
}

fn train<F>(positives: &InteractionMatrix, cfg: &RankingConfig, mut draw: F) -> Result<BprFit>
where
    F: FnMut(&TripleSampler<'_>, &mut ChaCha8Rng) -> Result<Triple>,
{
    cfg.validate()?;
    let sampler = TripleSampler::new(positives)?;
    let mut model = FactorModel::random(positives.n_users(), positives.n_items(), cfg.latent_dim, cfg.seed);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(4);
    let steps = sampler.n_pairs();
    let mut epoch_loss = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        let mut total = 0.0;
        for _ in 0..steps {
            let t = draw(&sampler, &mut rng)?;
            total += sgd_step(&mut model, t, cfg);
        }
        epoch_loss.push(total / steps as f64);
    }
    Ok(BprFit { model, epoch_loss })
}

/// BPR by SGD over uniformly sampled triples; one epoch draws as many
/// triples as there are usable positive pairs.
pub fn fit_bpr(positives: &InteractionMatrix, cfg: &RankingConfig) -> Result<BprFit> {
    train(positives, cfg, |s, rng| Ok(s.sample(rng)))
}

/// BPR whose triples come from the distance-restricted set with
/// probability `beta`, with `dist(i, j) = √(1 − ρ_ij)`.
pub fn fit_bpr_nov(positives: &InteractionMatrix, stats: &MarketStats, cfg: &RankingConfig) -> Result<BprFit> {
    let n = positives.n_items();
    if stats.n_items() != n {
        return Err(Error::InvalidData(format!("moments cover {} items, holdings {n}", stats.n_items())));
    }
    let dist = dissimilarity_matrix(stats)?;
    let sampler = TripleSampler::new(positives)?;
    let filter = NoveltyFilter::new(&sampler, |i: usize, j: usize| dist[i][j], cfg);
    train(positives, cfg, |s, rng| sample_triple_nov(s, &filter, rng))
}

/// Positive / negative labels after thresholding modified ratings.
#[derive(Debug, Clone, PartialEq)]
pub struct RelabeledInteractions {
    pub positives: InteractionMatrix,
    pub negatives: InteractionMatrix,
    /// The rating threshold that was applied.
    pub tau_s: f64,
    /// Originally unheld pairs now labeled positive.
    pub negatives_to_positive: usize,
    /// Originally held pairs now labeled negative.
    pub positives_to_negative: usize,
    /// Number of originally unheld pairs.
    pub original_negatives: usize,
}

impl RelabeledInteractions {
    /// Fraction of original negatives converted to positive.
    pub fn conversion_rate(&self) -> f64 {
        self.negatives_to_positive as f64 / self.original_negatives as f64
    }
}

/// Relabels every pair by its modified rating `ỹ`. The global threshold
/// `tau_s` is the order statistic of `ỹ` over original negatives that
/// leaves `round(conversion_fraction · #negatives)` of them strictly above
/// it. Pairs above become positive, pairs below negative, and pairs exactly
/// at the threshold keep their original label.
pub fn mv_efficient_relabel(
    train: &InteractionMatrix,
    stats: &MarketStats,
    hyper: &Hyperparams,
    conversion_fraction: f64,
) -> Result<RelabeledInteractions> {
    if !(conversion_fraction > 0.0 && conversion_fraction < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "conversion_fraction must lie in (0, 1), got {conversion_fraction}"
        )));
    }
    let targets = ModifiedRatings::new(train, stats, hyper)?;
    let rows: Vec<Vec<f64>> = map_indices(train.n_users(), |u| targets.row(u).iter().map(|r| r.y_tilde).collect());

    let mut neg: Vec<f64> = rows
        .iter()
        .enumerate()
        .flat_map(|(u, row)| row.iter().enumerate().filter(move |(i, _)| !train.contains(u, *i)).map(|(_, &v)| v))
        .collect();
    let total = neg.len();
    if total == 0 {
        return Err(Error::ThresholdUndefined("no negative pairs".into()));
    }
    neg.sort_by(f64::total_cmp);
    if neg[0] == neg[total - 1] {
        return Err(Error::ThresholdUndefined("all negative modified ratings are equal".into()));
    }
    let k = round(conversion_fraction * total as f64) as usize;
    if k == 0 || k >= total {
        return Err(Error::ThresholdUndefined(format!(
            "fraction {conversion_fraction} of {total} negatives converts {k} pairs"
        )));
    }
    let tau_s = neg[total - k - 1];

    let mut pos_rows = Vec::with_capacity(train.n_users());
    let mut neg_rows = Vec::with_capacity(train.n_users());
    let (mut to_pos, mut to_neg) = (0, 0);
    for (u, row) in rows.iter().enumerate() {
        let mut p = Vec::new();
        let mut q = Vec::new();
        for (i, &v) in row.iter().enumerate() {
            let held = train.contains(u, i);
            let positive = if v > tau_s {
                true
            } else if v < tau_s {
                false
            } else {
                held
            };
            match (held, positive) {
                (false, true) => to_pos += 1,
                (true, false) => to_neg += 1,
                _ => {}
            }
            if positive {
                p.push(i);
            } else {
                q.push(i);
            }
        }
        pos_rows.push(p);
        neg_rows.push(q);
    }
    if to_pos == 0 {
        return Err(Error::ThresholdUndefined("threshold converts no negatives".into()));
    }
    Ok(RelabeledInteractions {
        positives: train.with_rows(pos_rows)?,
        negatives: train.with_rows(neg_rows)?,
        tau_s,
        negatives_to_positive: to_pos,
        positives_to_negative: to_neg,
        original_negatives: total,
    })
}

/// All pairwise `√(1 − ρ_ij)`.
pub fn dissimilarity_matrix(stats: &MarketStats) -> Result<Vec<Vec<f64>>> {
    let n = stats.n_items();
    let rows = map_indices(n, |i| (0..n).map(|j| dissimilarity(stats, i, j)).collect::<Result<Vec<f64>>>());
    rows.into_iter().collect()
}
