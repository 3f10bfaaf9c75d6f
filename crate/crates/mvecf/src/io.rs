//! CSV file formats.
//!
//! * returns: `period,item_id,return`, one row per (period, item)
//! * holdings: `user_id,item_id`; a yearly set is a directory of
//!   `holdings_<year>.csv` files
//! * relabeled pairs: `user_id,item_id,label`
//! * loss trace: `epoch,train_loss,val_loss`
//! * recommendations: `user_id,rank,item_id,score`
//! * per-user report rows and the sweep summary table

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::path::Path;

use mvecf_core::eval::EvalReport;
use mvecf_core::ranking::RelabeledInteractions;
use mvecf_core::{InteractionMatrix, RecommendationList, ReturnsPanel};
use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{CliError, Result, StageExt};

fn reader(path: &Path, expected: &[&str]) -> Result<csv::Reader<File>> {
    let file = File::open(path).map_err(|e| CliError::io(path, e))?;
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
    let headers = rdr.headers().map_err(|e| CliError::format(path, e.to_string()))?;
    let got: Vec<&str> = headers.iter().collect();
    if got != expected {
        return Err(CliError::format(
            path,
            format!("expected header `{}`, found `{}`", expected.join(","), got.join(",")),
        ));
    }
    Ok(rdr)
}

fn line_of(record: &csv::StringRecord) -> u64 {
    record.position().map_or(0, |p| p.line())
}

fn records(path: &Path, rdr: &mut csv::Reader<File>) -> Result<Vec<csv::StringRecord>> {
    rdr.records()
        .map(|r| r.map_err(|e| CliError::format(path, e.to_string())))
        .collect()
}

/// Reads a long-format returns file. Items are sorted by id and periods by
/// label; every item needs a value for every period. `YYYY-MM` labels at 12
/// periods per year must also be consecutive months.
pub fn read_returns(path: &Path, periods_per_year: u32) -> Result<ReturnsPanel> {
    let mut rdr = reader(path, &["period", "item_id", "return"])?;
    let mut cells: BTreeMap<String, BTreeMap<String, f64>> = BTreeMap::new();
    let mut items = BTreeSet::new();
    for rec in records(path, &mut rdr)? {
        let line = line_of(&rec);
        let (period, item, value) = (&rec[0], &rec[1], &rec[2]);
        if period.is_empty() || item.is_empty() {
            return Err(CliError::format(path, format!("line {line}: empty period or item_id")));
        }
        let value: f64 = value
            .parse()
            .map_err(|_| CliError::format(path, format!("line {line}: invalid return `{value}`")))?;
        let row = cells.entry(period.to_string()).or_default();
        if row.insert(item.to_string(), value).is_some() {
            return Err(CliError::format(path, format!("line {line}: duplicate ({period}, {item})")));
        }
        items.insert(item.to_string());
    }
    if cells.is_empty() {
        return Err(CliError::format(path, "no returns"));
    }
    let items: Vec<String> = items.into_iter().collect();
    for (period, row) in &cells {
        if row.len() != items.len() {
            let missing: Vec<&str> = items.iter().filter(|i| !row.contains_key(*i)).map(String::as_str).take(5).collect();
            return Err(CliError::format(
                path,
                format!("period {period} lacks returns for {} items (e.g. {})", items.len() - row.len(), missing.join(", ")),
            ));
        }
    }
    let periods: Vec<String> = cells.keys().cloned().collect();
    if periods_per_year == 12 {
        check_monthly(path, &periods)?;
    }
    let mut m = DMatrix::zeros(periods.len(), items.len());
    for (t, row) in cells.values().enumerate() {
        for (i, v) in row.values().enumerate() {
            m[(t, i)] = *v;
        }
    }
    ReturnsPanel::new(m, periods, items, periods_per_year).stage("load")
}

fn parse_month(label: &str) -> Option<(i32, u32)> {
    let (y, m) = label.split_once('-')?;
    if y.len() != 4 || m.len() != 2 {
        return None;
    }
    let month: u32 = m.parse().ok()?;
    (1..=12).contains(&month).then_some((y.parse().ok()?, month))
}

fn check_monthly(path: &Path, periods: &[String]) -> Result<()> {
    let parsed: Option<Vec<(i32, u32)>> = periods.iter().map(|p| parse_month(p)).collect();
    let Some(parsed) = parsed else {
        return Ok(());
    };
    for w in parsed.windows(2) {
        let next = if w[0].1 == 12 { (w[0].0 + 1, 1) } else { (w[0].0, w[0].1 + 1) };
        if w[1] != next {
            return Err(CliError::format(
                path,
                format!("periods are not contiguous: {}-{:02} follows {}-{:02}", w[1].0, w[1].1, w[0].0, w[0].1),
            ));
        }
    }
    Ok(())
}

/// Reads a holdings snapshot. Duplicates collapse; users with fewer than
/// `min_holdings` rows are dropped; ids are sorted.
pub fn read_holdings(path: &Path, min_holdings: usize) -> Result<InteractionMatrix> {
    let mut rdr = reader(path, &["user_id", "item_id"])?;
    let mut pairs = Vec::new();
    for rec in records(path, &mut rdr)? {
        if rec[0].is_empty() || rec[1].is_empty() {
            return Err(CliError::format(path, format!("line {}: empty user_id or item_id", line_of(&rec))));
        }
        pairs.push((rec[0].to_string(), rec[1].to_string()));
    }
    InteractionMatrix::from_id_pairs(pairs, min_holdings).stage("load")
}

/// Reads every `holdings_<year>.csv` in `dir`.
pub fn read_holdings_dir(dir: &Path, min_holdings: usize) -> Result<BTreeMap<i32, InteractionMatrix>> {
    let entries = std::fs::read_dir(dir).map_err(|e| CliError::io(dir, e))?;
    let mut out = BTreeMap::new();
    for entry in entries {
        let entry = entry.map_err(|e| CliError::io(dir, e))?;
        let name = entry.file_name();
        let Some(year) = name
            .to_str()
            .and_then(|n| n.strip_prefix("holdings_"))
            .and_then(|n| n.strip_suffix(".csv"))
            .and_then(|y| y.parse::<i32>().ok())
        else {
            continue;
        };
        out.insert(year, read_holdings(&entry.path(), min_holdings)?);
    }
    if out.is_empty() {
        return Err(CliError::format(dir, "no holdings_<year>.csv files"));
    }
    Ok(out)
}

fn writer(path: &Path) -> Result<csv::Writer<File>> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
    }
    let file = File::create(path).map_err(|e| CliError::io(path, e))?;
    Ok(csv::Writer::from_writer(file))
}

fn write_rows<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<()> {
    let mut w = writer(path)?;
    for row in rows {
        w.serialize(row).map_err(|e| CliError::format(path, e.to_string()))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

pub fn write_returns(path: &Path, panel: &ReturnsPanel) -> Result<()> {
    #[derive(Serialize)]
    struct Row<'a> {
        period: &'a str,
        item_id: &'a str,
        #[serde(rename = "return")]
        value: f64,
    }
    let r = panel.returns();
    let rows = panel.period_labels().iter().enumerate().flat_map(|(t, period)| {
        panel
            .item_ids()
            .iter()
            .enumerate()
            .map(move |(i, item_id)| Row { period, item_id, value: r[(t, i)] })
    });
    write_rows(path, rows)
}

#[derive(Serialize)]
struct Pair<'a> {
    user_id: &'a str,
    item_id: &'a str,
}

pub fn write_holdings(path: &Path, holdings: &InteractionMatrix) -> Result<()> {
    let rows = holdings
        .pairs()
        .map(|(u, i)| Pair { user_id: &holdings.user_ids()[u], item_id: &holdings.item_ids()[i] });
    write_rows(path, rows)
}

/// Writes every pair labeled positive (`1`) and every original holding
/// labeled negative (`0`); unlisted pairs are negative.
pub fn write_relabeled(path: &Path, original: &InteractionMatrix, relabeled: &RelabeledInteractions) -> Result<()> {
    #[derive(Serialize)]
    struct Row<'a> {
        user_id: &'a str,
        item_id: &'a str,
        label: u8,
    }
    let p = &relabeled.positives;
    let mut rows = Vec::new();
    for u in 0..original.n_users() {
        let mut items: BTreeMap<usize, u8> = p.row(u).iter().map(|&i| (i, 1)).collect();
        for &i in original.row(u) {
            items.entry(i).or_insert(0);
        }
        for (i, label) in items {
            rows.push(Row { user_id: &original.user_ids()[u], item_id: &original.item_ids()[i], label });
        }
    }
    write_rows(path, rows)
}

/// One line of a loss trace file.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TraceRow {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
}

pub fn write_loss_trace(path: &Path, rows: &[TraceRow]) -> Result<()> {
    write_rows(path, rows)
}

pub fn write_recommendations(path: &Path, recs: &RecommendationList, holdings: &InteractionMatrix) -> Result<()> {
    #[derive(Serialize)]
    struct Row<'a> {
        user_id: &'a str,
        rank: usize,
        item_id: &'a str,
        score: f64,
    }
    let rows = (0..recs.n_users()).flat_map(|u| {
        recs.list(u).iter().enumerate().map(move |(r, &(i, score))| Row {
            user_id: &holdings.user_ids()[u],
            rank: r + 1,
            item_id: &holdings.item_ids()[i],
            score,
        })
    });
    write_rows(path, rows)
}

pub fn write_per_user(path: &Path, report: &EvalReport) -> Result<()> {
    #[derive(Serialize)]
    struct Row<'a> {
        user_id: &'a str,
        n_holdings: usize,
        n_test: usize,
        average_precision: Option<f64>,
        recall: Option<f64>,
        mu_init: f64,
        mu_rec: f64,
        sigma_init: f64,
        sigma_rec: f64,
        sr_init: Option<f64>,
        sr_rec: Option<f64>,
        expost_sr_init: Option<f64>,
        expost_sr_rec: Option<f64>,
    }
    let rows = report.per_user.iter().map(|r| Row {
        user_id: &r.user_id,
        n_holdings: r.n_holdings,
        n_test: r.n_test,
        average_precision: r.average_precision,
        recall: r.recall,
        mu_init: r.mu_init,
        mu_rec: r.mu_rec,
        sigma_init: r.sigma_init,
        sigma_rec: r.sigma_rec,
        sr_init: r.sr_init,
        sr_rec: r.sr_rec,
        expost_sr_init: r.expost_sr_init,
        expost_sr_rec: r.expost_sr_rec,
    });
    write_rows(path, rows)
}

/// One row of the sweep summary table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub lambda_mv: f64,
    pub gamma: f64,
    pub delta_mu: f64,
    pub delta_sigma: f64,
    pub delta_sr: f64,
    pub p_sr_improved: f64,
    pub map_at_k: f64,
    pub recall_at_k: f64,
    pub expost_delta_sr: Option<f64>,
    pub expost_p_sr_improved: Option<f64>,
}

impl SummaryRow {
    pub fn new(lambda_mv: f64, gamma: f64, r: &EvalReport) -> Self {
        Self {
            lambda_mv,
            gamma,
            delta_mu: r.delta_mu,
            delta_sigma: r.delta_sigma,
            delta_sr: r.delta_sr,
            p_sr_improved: r.p_sr_improved,
            map_at_k: r.map_at_k,
            recall_at_k: r.recall_at_k,
            expost_delta_sr: r.expost_delta_sr,
            expost_p_sr_improved: r.expost_p_sr_improved,
        }
    }
}

pub fn write_summary(path: &Path, rows: &[SummaryRow]) -> Result<()> {
    write_rows(path, rows)
}

/// Reads a summary table back (used by tests and downstream tooling).
pub fn read_summary(path: &Path) -> Result<Vec<BTreeMap<String, String>>> {
    let file = File::open(path).map_err(|e| CliError::io(path, e))?;
    let mut rdr = csv::Reader::from_reader(file);
    rdr.deserialize()
        .map(|r| r.map_err(|e| CliError::format(path, e.to_string())))
        .collect()
}
