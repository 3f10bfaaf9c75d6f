//! User holdings, yearly sub-datasets and the per-user train/test/validation split.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::market::{estimate_moments, period_year, Loading, MarketStats, ReturnsPanel};
use crate::num::floor;
use crate::{Error, Result};

/// Sparse binary user × item matrix. Rows hold sorted, distinct item indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InteractionMatrix {
    rows: Vec<Vec<usize>>,
    n_items: usize,
    user_ids: Vec<String>,
    item_ids: Vec<String>,
}

impl InteractionMatrix {
    /// Builds a matrix from per-user item lists. Rows are sorted and
    /// deduplicated; empty rows are allowed (held-out splits have them).
    pub fn from_rows(
        rows: Vec<Vec<usize>>,
        user_ids: Vec<String>,
        item_ids: Vec<String>,
    ) -> Result<Self> {
        if rows.len() != user_ids.len() {
            return Err(Error::InvalidData(format!(
                "{} rows for {} user ids",
                rows.len(),
                user_ids.len()
            )));
        }
        let n_items = item_ids.len();
        let mut clean = Vec::with_capacity(rows.len());
        for mut row in rows {
            row.sort_unstable();
            row.dedup();
            if let Some(&last) = row.last() {
                if last >= n_items {
                    return Err(Error::IndexOutOfRange { index: last, len: n_items });
                }
            }
            clean.push(row);
        }
        Ok(Self {
            rows: clean,
            n_items,
            user_ids,
            item_ids,
        })
    }

    /// Anonymous matrix with generated ids `u{k}` / `i{k}`.
    pub fn from_index_rows(rows: Vec<Vec<usize>>, n_items: usize) -> Result<Self> {
        let user_ids = (0..rows.len()).map(|u| format!("u{u}")).collect();
        let item_ids = (0..n_items).map(|i| format!("i{i}")).collect();
        Self::from_rows(rows, user_ids, item_ids)
    }

    /// Ingests `(user_id, item_id)` pairs: duplicates collapse, users with
    /// fewer than `min_holdings` distinct items are dropped, and both id
    /// maps are sorted lexicographically. The item universe is the set of
    /// items held by retained users.
    pub fn from_id_pairs<I, U, T>(pairs: I, min_holdings: usize) -> Result<Self>
    where
        I: IntoIterator<Item = (U, T)>,
        U: Into<String>,
        T: Into<String>,
    {
        let mut by_user: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
        for (u, i) in pairs {
            by_user.entry(u.into()).or_default().insert(i.into());
        }
        if by_user.is_empty() {
            return Err(Error::EmptyData("no holdings".into()));
        }
        by_user.retain(|_, items| items.len() >= min_holdings.max(1));
        if by_user.is_empty() {
            return Err(Error::EmptyData(format!(
                "no user holds at least {min_holdings} items"
            )));
        }
        let items: BTreeSet<&String> = by_user.values().flatten().collect();
        let item_ids: Vec<String> = items.into_iter().cloned().collect();
        let index: BTreeMap<&str, usize> =
            item_ids.iter().enumerate().map(|(k, id)| (id.as_str(), k)).collect();
        let rows = by_user
            .values()
            .map(|items| items.iter().map(|id| index[id.as_str()]).collect())
            .collect();
        let user_ids = by_user.keys().cloned().collect();
        Self::from_rows(rows, user_ids, item_ids)
    }

    pub fn n_users(&self) -> usize {
        self.rows.len()
    }

    pub fn n_items(&self) -> usize {
        self.n_items
    }

    /// Number of stored (user, item) pairs.
    pub fn nnz(&self) -> usize {
        self.rows.iter().map(Vec::len).sum()
    }

    pub fn row(&self, u: usize) -> &[usize] {
        &self.rows[u]
    }

    pub fn rows(&self) -> &[Vec<usize>] {
        &self.rows
    }

    pub fn contains(&self, u: usize, i: usize) -> bool {
        self.rows[u].binary_search(&i).is_ok()
    }

    pub fn user_ids(&self) -> &[String] {
        &self.user_ids
    }

    pub fn item_ids(&self) -> &[String] {
        &self.item_ids
    }

    /// Iterates all stored pairs in (user, item) order.
    pub fn pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.rows
            .iter()
            .enumerate()
            .flat_map(|(u, row)| row.iter().map(move |&i| (u, i)))
    }

    /// Same universe, different rows.
    pub fn with_rows(&self, rows: Vec<Vec<usize>>) -> Result<Self> {
        Self::from_rows(rows, self.user_ids.clone(), self.item_ids.clone())
    }

    /// Element-wise union over the same universe.
    pub fn union(&self, other: &Self) -> Result<Self> {
        if self.n_users() != other.n_users() || self.n_items != other.n_items {
            return Err(Error::InvalidData("union of matrices with different shapes".into()));
        }
        let rows = self
            .rows
            .iter()
            .zip(&other.rows)
            .map(|(a, b)| a.iter().chain(b).copied().collect())
            .collect();
        self.with_rows(rows)
    }
}

/// Relative sizes of the train / test / validation parts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitRatios {
    pub train: u32,
    pub test: u32,
    pub validation: u32,
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self { train: 8, test: 1, validation: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: InteractionMatrix,
    pub test: InteractionMatrix,
    pub validation: InteractionMatrix,
}

/// Deterministic 64-bit FNV-1a, used to derive per-user seeds.
fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Per-user random split. Test and validation each receive
/// `floor(h · ratio / total)` of a user's `h` holdings and train keeps the
/// rest; users with fewer than 3 holdings go entirely to train. Each user's
/// shuffle is seeded from `(seed, user_id)`, so the partition does not
/// depend on user order.
pub fn split_dataset(full: &InteractionMatrix, ratios: SplitRatios, seed: u64) -> Result<Split> {
    let total = ratios.train + ratios.test + ratios.validation;
    if total == 0 || ratios.train == 0 {
        return Err(Error::InvalidConfig("split ratios need a positive train share".into()));
    }
    let mut train = Vec::with_capacity(full.n_users());
    let mut test = Vec::with_capacity(full.n_users());
    let mut validation = Vec::with_capacity(full.n_users());
    for (u, row) in full.rows.iter().enumerate() {
        let h = row.len();
        if h < 3 {
            train.push(row.clone());
            test.push(Vec::new());
            validation.push(Vec::new());
            continue;
        }
        let n_test = floor(h as f64 * ratios.test as f64 / total as f64) as usize;
        let n_val = floor(h as f64 * ratios.validation as f64 / total as f64) as usize;
        let (n_test, n_val) = if n_test + n_val >= h { (0, 0) } else { (n_test, n_val) };

        // order by item id so the shuffle is independent of index layout
        let mut items = row.clone();
        items.sort_by(|&a, &b| full.item_ids[a].cmp(&full.item_ids[b]));
        let user_seed = fnv1a(full.user_ids[u].as_bytes()) ^ seed.rotate_left(17);
        let mut rng = ChaCha8Rng::seed_from_u64(user_seed);
        items.shuffle(&mut rng);

        test.push(items[..n_test].to_vec());
        validation.push(items[n_test..n_test + n_val].to_vec());
        train.push(items[n_test + n_val..].to_vec());
    }
    Ok(Split {
        train: full.with_rows(train)?,
        test: full.with_rows(test)?,
        validation: full.with_rows(validation)?,
    })
}

/// One year's experiment data: split interactions, moments from the
/// estimation window and the realized returns of the following window.
#[derive(Debug, Clone)]
pub struct SubDataset {
    pub train: InteractionMatrix,
    pub test: InteractionMatrix,
    pub validation: InteractionMatrix,
    pub stats: MarketStats,
    /// `None` when the ex-post window is empty.
    pub expost_panel: Option<ReturnsPanel>,
    pub year_label: i32,
}

/// How moments are estimated from a window.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MomentOptions {
    pub annualize: bool,
    pub loading: Loading,
}

fn window_periods(
    returns: &ReturnsPanel,
    first: i32,
    last: i32,
    missing: &mut Vec<String>,
) -> Vec<usize> {
    let years: Vec<Option<i32>> = returns.period_labels().iter().map(|l| period_year(l)).collect();
    let mut periods = Vec::new();
    for year in first..=last {
        let before = periods.len();
        periods.extend(
            years
                .iter()
                .enumerate()
                .filter(|(_, y)| **y == Some(year))
                .map(|(t, _)| t),
        );
        if periods.len() == before {
            missing.push(format!("returns for year {year}"));
        }
    }
    periods
}

/// Builds the sub-dataset for `year`: holdings of that year, moments from
/// years `year-est_years+1 ..= year`, ex-post returns from
/// `year+1 ..= year+post_years`. The item universe is the panel's item set;
/// held items missing from the panel are dropped with a warning.
pub fn build_yearly(
    holdings_by_year: &BTreeMap<i32, InteractionMatrix>,
    returns: &ReturnsPanel,
    year: i32,
    est_years: u32,
    post_years: u32,
    moments: MomentOptions,
    split_seed: u64,
) -> Result<SubDataset> {
    let holdings = holdings_by_year
        .get(&year)
        .ok_or_else(|| Error::EmptyData(format!("no holdings for year {year}")))?;
    if est_years == 0 {
        return Err(Error::InvalidConfig("est_years must be positive".into()));
    }

    let mut missing = Vec::new();
    let est = window_periods(returns, year - est_years as i32 + 1, year, &mut missing);
    let post = if post_years > 0 {
        window_periods(returns, year + 1, year + post_years as i32, &mut missing)
    } else {
        Vec::new()
    };
    if !missing.is_empty() {
        return Err(Error::Coverage { missing });
    }

    let panel_index: BTreeMap<&str, usize> = returns
        .item_ids()
        .iter()
        .enumerate()
        .map(|(k, id)| (id.as_str(), k))
        .collect();
    let mut uncovered = BTreeSet::new();
    let mut rows = Vec::new();
    let mut users = Vec::new();
    for (u, row) in holdings.rows().iter().enumerate() {
        let mapped: Vec<usize> = row
            .iter()
            .filter_map(|&i| {
                let id = holdings.item_ids()[i].as_str();
                let hit = panel_index.get(id).copied();
                if hit.is_none() {
                    uncovered.insert(id);
                }
                hit
            })
            .collect();
        if !mapped.is_empty() {
            rows.push(mapped);
            users.push(holdings.user_ids()[u].clone());
        }
    }
    if rows.is_empty() {
        return Err(Error::Coverage {
            missing: uncovered.into_iter().map(String::from).collect(),
        });
    }
    if !uncovered.is_empty() {
        log::warn!(
            "year {year}: {} held items have no return coverage and were excluded",
            uncovered.len()
        );
    }

    let full = InteractionMatrix::from_rows(rows, users, returns.item_ids().to_vec())?;
    let all_items: Vec<usize> = (0..returns.n_items()).collect();
    let est_panel = returns.select(&est, &all_items)?;
    let stats = estimate_moments(&est_panel, moments.annualize, moments.loading)?;
    let expost_panel = if post.is_empty() {
        None
    } else {
        Some(returns.select(&post, &all_items)?)
    };
    let split = split_dataset(&full, SplitRatios::default(), split_seed)?;
    Ok(SubDataset {
        train: split.train,
        test: split.test,
        validation: split.validation,
        stats,
        expost_panel,
        year_label: year,
    })
}
