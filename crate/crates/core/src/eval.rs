//! Ranking metrics and ex-ante / ex-post portfolio efficiency metrics.
//!
//! Two recommendation lists feed an evaluation. Ranking metrics (MAP@k,
//! Recall@k) use lists that exclude train and validation holdings and are
//! scored against test positives. Portfolio metrics use lists that exclude
//! every known holding; each user's equal-weight portfolio is compared with
//! the equal-weight portfolio over holdings plus recommendations.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::holdings::{InteractionMatrix, SubDataset};
use crate::market::{MarketStats, ReturnsPanel};
use crate::num::sqrt;
use crate::par::map_indices;
use crate::wmf::FactorModel;
use crate::{Error, Result};

/// Report layout version.
pub const SCHEMA_VERSION: u32 = 1;

/// Describes how ranking-metric candidates are formed; stored in reports.
pub const CANDIDATE_PROTOCOL: &str =
    "rank all items outside train+validation holdings; hits are test-set holdings";

/// Portfolios whose standard deviation is at most this (relative to the
/// mean magnitude, floor 1) count as riskless and get no Sharpe ratio.
const ZERO_RISK_SD: f64 = 1e-12;

/// Per-user ordered `(item, score)` lists.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecommendationList {
    lists: Vec<Vec<(usize, f64)>>,
}

impl RecommendationList {
    /// Checks that items are distinct within each list.
    pub fn new(lists: Vec<Vec<(usize, f64)>>) -> Result<Self> {
        for (u, list) in lists.iter().enumerate() {
            let mut items: Vec<usize> = list.iter().map(|p| p.0).collect();
            items.sort_unstable();
            if items.windows(2).any(|w| w[0] == w[1]) {
                return Err(Error::InvalidData(format!("duplicate recommended item for user {u}")));
            }
        }
        Ok(Self { lists })
    }

    pub fn n_users(&self) -> usize {
        self.lists.len()
    }

    pub fn list(&self, u: usize) -> &[(usize, f64)] {
        &self.lists[u]
    }

    pub fn items(&self, u: usize) -> impl Iterator<Item = usize> + '_ {
        self.lists[u].iter().map(|p| p.0)
    }

    pub fn lists(&self) -> &[Vec<(usize, f64)>] {
        &self.lists
    }
}

/// The `k` highest-scored items outside each user's excluded set, ties by
/// ascending item index.
pub fn topk_from_scores<F>(n_users: usize, n_items: usize, exclude: &InteractionMatrix, k: usize, scores: F) -> Result<RecommendationList>
where
    F: Fn(usize) -> Vec<f64> + Sync,
{
    if exclude.n_users() != n_users || exclude.n_items() != n_items {
        return Err(Error::InvalidData(format!(
            "exclusion sets are {}x{}, scores {n_users}x{n_items}",
            exclude.n_users(),
            exclude.n_items()
        )));
    }
    for u in 0..n_users {
        let available = n_items - exclude.row(u).len();
        if k > available {
            return Err(Error::InsufficientUniverse { user: u, needed: k, available });
        }
    }
    let lists = map_indices(n_users, |u| {
        let s = scores(u);
        let mut cand: Vec<usize> = (0..n_items).filter(|&i| !exclude.contains(u, i)).collect();
        cand.sort_by(|&a, &b| s[b].total_cmp(&s[a]).then(a.cmp(&b)));
        cand.into_iter().take(k).map(|i| (i, s[i])).collect()
    });
    Ok(RecommendationList { lists })
}

/// Top-`k` recommendations by predicted rating.
pub fn topk_recommend(model: &FactorModel, exclude: &InteractionMatrix, k: usize) -> Result<RecommendationList> {
    topk_from_scores(model.n_users(), model.n_items(), exclude, k, |u| model.user_ratings(u))
}

/// AP@k of one ranked list; `None` when `relevant` is empty. `relevant`
/// must be sorted.
pub fn average_precision(ranked: &[usize], relevant: &[usize], k: usize) -> Option<f64> {
    if relevant.is_empty() {
        return None;
    }
    let norm = relevant.len().min(k);
    if norm == 0 {
        return Some(0.0);
    }
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (r, item) in ranked.iter().take(k).enumerate() {
        if relevant.binary_search(item).is_ok() {
            hits += 1;
            sum += hits as f64 / (r + 1) as f64;
        }
    }
    Some(sum / norm as f64)
}

/// Recall@k of one ranked list; `None` when `relevant` is empty.
pub fn recall(ranked: &[usize], relevant: &[usize], k: usize) -> Option<f64> {
    if relevant.is_empty() {
        return None;
    }
    let hits = ranked.iter().take(k).filter(|i| relevant.binary_search(i).is_ok()).count();
    Some(hits as f64 / relevant.len() as f64)
}

fn per_user<F>(recs: &RecommendationList, relevant: &InteractionMatrix, metric: F) -> Vec<Option<f64>>
where
    F: Fn(&[usize], &[usize]) -> Option<f64> + Sync,
{
    map_indices(recs.n_users(), |u| {
        let ranked: Vec<usize> = recs.items(u).collect();
        metric(&ranked, relevant.row(u))
    })
}

fn mean_defined(values: &[Option<f64>]) -> f64 {
    let (sum, n) = values.iter().flatten().fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Mean AP@k over users with a nonempty relevant set (0 if there are none).
pub fn map_at_k(recs: &RecommendationList, relevant: &InteractionMatrix, k: usize) -> f64 {
    mean_defined(&per_user(recs, relevant, |r, rel| average_precision(r, rel, k)))
}

/// Mean Recall@k over users with a nonempty relevant set (0 if there are none).
pub fn recall_at_k(recs: &RecommendationList, relevant: &InteractionMatrix, k: usize) -> f64 {
    mean_defined(&per_user(recs, relevant, |r, rel| recall(r, rel, k)))
}

/// Mean, standard deviation and Sharpe ratio of one portfolio.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PortfolioStats {
    pub mu: f64,
    pub sigma: f64,
    /// `None` for a riskless portfolio.
    pub sr: Option<f64>,
}

impl PortfolioStats {
    fn new(mu: f64, var: f64) -> Self {
        let sigma = sqrt(var.max(0.0));
        let sr = if sigma <= ZERO_RISK_SD * mu.abs().max(1.0) { None } else { Some(mu / sigma) };
        Self { mu, sigma, sr }
    }
}

/// Initial and recommended portfolio of one user.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PortfolioRow {
    pub initial: PortfolioStats,
    pub recommended: PortfolioStats,
}

impl PortfolioRow {
    pub fn delta_sr(&self) -> Option<f64> {
        Some(self.recommended.sr? - self.initial.sr?)
    }
}

/// Means over users of the portfolio changes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PortfolioSummary {
    pub delta_mu: f64,
    pub delta_sigma: f64,
    /// Over users whose two Sharpe ratios are defined.
    pub delta_sr: f64,
    /// Fraction of those users whose Sharpe ratio strictly increased.
    pub p_sr_improved: f64,
    /// Users excluded from the Sharpe statistics for zero risk.
    pub zero_risk_users: usize,
}

fn summarize(rows: &[PortfolioRow]) -> PortfolioSummary {
    let n = rows.len().max(1) as f64;
    let delta_mu = rows.iter().map(|r| r.recommended.mu - r.initial.mu).sum::<f64>() / n;
    let delta_sigma = rows.iter().map(|r| r.recommended.sigma - r.initial.sigma).sum::<f64>() / n;
    let deltas: Vec<f64> = rows.iter().filter_map(PortfolioRow::delta_sr).collect();
    let (delta_sr, p_sr_improved) = if deltas.is_empty() {
        (0.0, 0.0)
    } else {
        let d = deltas.len() as f64;
        (deltas.iter().sum::<f64>() / d, deltas.iter().filter(|&&x| x > 0.0).count() as f64 / d)
    };
    PortfolioSummary { delta_mu, delta_sigma, delta_sr, p_sr_improved, zero_risk_users: rows.len() - deltas.len() }
}

fn check_portfolios(holdings: &InteractionMatrix, recs: &RecommendationList, n_items: usize) -> Result<()> {
    if holdings.n_items() != n_items {
        return Err(Error::InvalidData(format!("holdings cover {} items, returns {n_items}", holdings.n_items())));
    }
    if recs.n_users() != holdings.n_users() {
        return Err(Error::InvalidData(format!(
            "{} recommendation lists for {} users",
            recs.n_users(),
            holdings.n_users()
        )));
    }
    for u in 0..holdings.n_users() {
        if holdings.row(u).is_empty() {
            return Err(Error::EmptyData(format!("user {} holds nothing", holdings.user_ids()[u])));
        }
        for i in recs.items(u) {
            if i >= n_items {
                return Err(Error::IndexOutOfRange { index: i, len: n_items });
            }
            if holdings.contains(u, i) {
                return Err(Error::InvalidData(format!(
                    "item {i} recommended to user {} is already held",
                    holdings.user_ids()[u]
                )));
            }
        }
    }
    Ok(())
}

fn equal_weights(n: usize, held: &[usize], recs: &[(usize, f64)]) -> (Vec<f64>, Vec<f64>) {
    let mut init = vec![0.0; n];
    for &i in held {
        init[i] = 1.0 / held.len() as f64;
    }
    let mut rec = vec![0.0; n];
    let total = (held.len() + recs.len()) as f64;
    for i in held.iter().copied().chain(recs.iter().map(|p| p.0)) {
        rec[i] = 1.0 / total;
    }
    (init, rec)
}

/// Ex-ante comparison of equal-weight portfolios under `stats`.
pub fn portfolio_metrics(
    holdings: &InteractionMatrix,
    recs: &RecommendationList,
    stats: &MarketStats,
) -> Result<(PortfolioSummary, Vec<PortfolioRow>)> {
    let n = stats.n_items();
    check_portfolios(holdings, recs, n)?;
    let rows = map_indices(holdings.n_users(), |u| {
        let (w0, w1) = equal_weights(n, holdings.row(u), recs.list(u));
        let stats_of = |w: &[f64]| PortfolioStats::new(stats.portfolio_mean(w), stats.portfolio_variance(w));
        PortfolioRow { initial: stats_of(&w0), recommended: stats_of(&w1) }
    });
    Ok((summarize(&rows), rows))
}

fn realized(panel: &ReturnsPanel, w: &[f64], annualize: bool) -> PortfolioStats {
    let r = panel.returns();
    let t = r.nrows();
    let series: Vec<f64> = (0..t).map(|s| (0..w.len()).filter(|&i| w[i] != 0.0).map(|i| w[i] * r[(s, i)]).sum()).collect();
    let mean = series.iter().sum::<f64>() / t as f64;
    let var = series.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (t - 1) as f64;
    let scale = if annualize { f64::from(panel.periods_per_year()) } else { 1.0 };
    PortfolioStats::new(mean * scale, var * scale)
}

/// Ex-post comparison on realized returns, weights held fixed over the
/// window. With `annualize` the mean and variance are scaled by the number
/// of periods per year.
pub fn expost_metrics(
    holdings: &InteractionMatrix,
    recs: &RecommendationList,
    panel: &ReturnsPanel,
    annualize: bool,
) -> Result<(PortfolioSummary, Vec<PortfolioRow>)> {
    let n = panel.n_items();
    check_portfolios(holdings, recs, n)?;
    if panel.n_periods() < 2 {
        return Err(Error::EmptyData(format!("ex-post panel has {} periods", panel.n_periods())));
    }
    let rows = map_indices(holdings.n_users(), |u| {
        let (w0, w1) = equal_weights(n, holdings.row(u), recs.list(u));
        PortfolioRow { initial: realized(panel, &w0, annualize), recommended: realized(panel, &w1, annualize) }
    });
    Ok((summarize(&rows), rows))
}

/// One user's line in the report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserRow {
    pub user_id: String,
    pub n_holdings: usize,
    pub n_test: usize,
    pub average_precision: Option<f64>,
    pub recall: Option<f64>,
    pub mu_init: f64,
    pub mu_rec: f64,
    pub sigma_init: f64,
    pub sigma_rec: f64,
    pub sr_init: Option<f64>,
    pub sr_rec: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expost_sr_init: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expost_sr_rec: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub schema_version: u32,
    pub k: usize,
    pub candidate_protocol: String,
    pub map_at_k: f64,
    pub recall_at_k: f64,
    /// Users with at least one test holding; the ranking metrics average over them.
    pub ranking_users: usize,
    pub ranking_users_skipped: usize,
    pub delta_mu: f64,
    pub delta_sigma: f64,
    pub delta_sr: f64,
    pub p_sr_improved: f64,
    pub zero_risk_users: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expost_delta_sr: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expost_p_sr_improved: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expost_zero_risk_users: Option<usize>,
    /// Outside the determinism contract.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timestamp: Option<String>,
    pub per_user: Vec<UserRow>,
}

/// Exclusion sets of the two protocols: train+validation for ranking
/// metrics, every holding for portfolio metrics.
pub fn exclusion_sets(data: &SubDataset) -> Result<(InteractionMatrix, InteractionMatrix)> {
    let known = data.train.union(&data.validation)?;
    let all = known.union(&data.test)?;
    Ok((known, all))
}

/// Full evaluation of two recommendation lists, built with the exclusion
/// sets of [`exclusion_sets`]. Ranking metrics use the first `k` items of
/// `ranking_recs`.
pub fn evaluate(
    data: &SubDataset,
    ranking_recs: &RecommendationList,
    portfolio_recs: &RecommendationList,
    k: usize,
    annualize: bool,
) -> Result<EvalReport> {
    let (_, holdings) = exclusion_sets(data)?;
    if ranking_recs.n_users() != holdings.n_users() {
        return Err(Error::InvalidData(format!(
            "{} ranking lists for {} users",
            ranking_recs.n_users(),
            holdings.n_users()
        )));
    }
    let ap = per_user(ranking_recs, &data.test, |r, rel| average_precision(r, rel, k));
    let rc = per_user(ranking_recs, &data.test, |r, rel| recall(r, rel, k));
    let (summary, rows) = portfolio_metrics(&holdings, portfolio_recs, &data.stats)?;
    let expost = match &data.expost_panel {
        Some(panel) => Some(expost_metrics(&holdings, portfolio_recs, panel, annualize)?),
        None => None,
    };
    let ranking_users = ap.iter().flatten().count();

    let per_user = (0..holdings.n_users())
        .map(|u| {
            let ex = expost.as_ref().map(|(_, r)| r[u]);
            UserRow {
                user_id: holdings.user_ids()[u].clone(),
                n_holdings: holdings.row(u).len(),
                n_test: data.test.row(u).len(),
                average_precision: ap[u],
                recall: rc[u],
                mu_init: rows[u].initial.mu,
                mu_rec: rows[u].recommended.mu,
                sigma_init: rows[u].initial.sigma,
                sigma_rec: rows[u].recommended.sigma,
                sr_init: rows[u].initial.sr,
                sr_rec: rows[u].recommended.sr,
                expost_sr_init: ex.and_then(|r| r.initial.sr),
                expost_sr_rec: ex.and_then(|r| r.recommended.sr),
            }
        })
        .collect();

    Ok(EvalReport {
        schema_version: SCHEMA_VERSION,
        k,
        candidate_protocol: CANDIDATE_PROTOCOL.into(),
        map_at_k: mean_defined(&ap),
        recall_at_k: mean_defined(&rc),
        ranking_users,
        ranking_users_skipped: holdings.n_users() - ranking_users,
        delta_mu: summary.delta_mu,
        delta_sigma: summary.delta_sigma,
        delta_sr: summary.delta_sr,
        p_sr_improved: summary.p_sr_improved,
        zero_risk_users: summary.zero_risk_users,
        expost_delta_sr: expost.as_ref().map(|(s, _)| s.delta_sr),
        expost_p_sr_improved: expost.as_ref().map(|(s, _)| s.p_sr_improved),
        expost_zero_risk_users: expost.as_ref().map(|(s, _)| s.zero_risk_users),
        timestamp: None,
        per_user,
    })
}

/// [`evaluate`] for a rating model: both lists are the model's top-`k`
/// under the respective exclusion sets.
pub fn evaluate_model(data: &SubDataset, model: &FactorModel, k: usize, annualize: bool) -> Result<EvalReport> {
    let (known, all) = exclusion_sets(data)?;
    let ranking = topk_recommend(model, &known, k)?;
    let portfolio = topk_recommend(model, &all, k)?;
    evaluate(data, &ranking, &portfolio, k, annualize)
}
