//! Data loading, fitting, recommendation and evaluation for one configured
//! run, plus the output directory layout.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use mvecf_core::eval::{self, EvalReport};
use mvecf_core::holdings::{build_yearly, MomentOptions};
use mvecf_core::mvecf::{fit_mvecf_reg, fit_mvecf_wmf};
use mvecf_core::mvopt::{two_step_rerank_with, SolverOptions};
use mvecf_core::ranking::{fit_bpr, fit_bpr_nov, mv_efficient_relabel, RelabeledInteractions};
use mvecf_core::synth::{gen_holdings, gen_returns_periods};
use mvecf_core::wmf::{fit_als, wmf_targets, LossTrace, Phase};
use mvecf_core::{Error, FactorModel, InteractionMatrix, RecommendationList, ReturnsPanel, SubDataset};
use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::{canonical_json, ExperimentConfig, ModelKind, SourceKind};
use crate::error::{CliError, Result, StageExt};
use crate::io::{self, SummaryRow, TraceRow};
use crate::model_io;

/// Marker file left in an output directory by a failed run.
pub const INCOMPLETE: &str = "INCOMPLETE";

/// Raw synthetic data: the full returns history and the holdings year.
pub fn synthetic_raw(cfg: &ExperimentConfig) -> Result<(ReturnsPanel, i32, InteractionMatrix)> {
    let s = &cfg.data.synthetic;
    let ppy = s.periods_per_year as usize;
    let total = s.t_periods + cfg.data.post_years as usize * ppy;
    let panel = gen_returns_periods(s, total).stage("generate")?;
    let holdings = gen_holdings(s).stage("generate")?;
    let year = cfg.data.year.unwrap_or(s.start_year + (s.t_periods / ppy) as i32 - 1);
    Ok((panel, year, holdings))
}

/// Builds the year's sub-dataset from the configured source.
pub fn load_data(cfg: &ExperimentConfig) -> Result<SubDataset> {
    let d = &cfg.data;
    let moments = MomentOptions { annualize: d.annualize, loading: d.loading };
    let (panel, by_year, year, est_years) = match d.source {
        SourceKind::Synthetic => {
            let (panel, year, holdings) = synthetic_raw(cfg)?;
            let s = &d.synthetic;
            let est = d.est_years.unwrap_or((s.t_periods / s.periods_per_year as usize) as u32);
            (panel, BTreeMap::from([(year, holdings)]), year, est)
        }
        SourceKind::Csv => {
            let panel = io::read_returns(d.returns.as_deref().expect("validated"), d.periods_per_year)?;
            let by_year = io::read_holdings_dir(d.holdings_dir.as_deref().expect("validated"), d.min_holdings)?;
            (panel, by_year, d.year.expect("validated"), d.est_years.unwrap_or(5))
        }
    };
    build_yearly(&by_year, &panel, year, est_years, d.post_years, moments, cfg.seed).stage("load")
}

/// A fitted model with its training trace.
#[derive(Debug, Clone)]
pub struct Fitted {
    pub model: FactorModel,
    pub trace: Vec<TraceRow>,
    pub relabeled: Option<RelabeledInteractions>,
}

/// End-of-sweep rows of an ALS or gradient-descent trace.
fn sweep_rows(trace: &LossTrace) -> Vec<TraceRow> {
    trace
        .iter()
        .filter(|p| p.phase != Phase::Users)
        .map(|p| TraceRow { epoch: p.epoch, train_loss: p.train_loss, val_loss: p.val_loss })
        .collect()
}

fn epoch_rows(losses: &[f64]) -> Vec<TraceRow> {
    losses
        .iter()
        .enumerate()
        .map(|(e, &l)| TraceRow { epoch: e + 1, train_loss: l, val_loss: None })
        .collect()
}

pub fn fit(cfg: &ExperimentConfig, data: &SubDataset) -> Result<Fitted> {
    let hyper = cfg.hyper();
    let ranking = cfg.ranking();
    let (train, stats, val) = (&data.train, &data.stats, Some(&data.validation));
    let als = |(model, trace): (FactorModel, LossTrace)| Fitted { model, trace: sweep_rows(&trace), relabeled: None };
    let bpr = |fit: mvecf_core::ranking::BprFit| Fitted { trace: epoch_rows(&fit.epoch_loss), model: fit.model, relabeled: None };
    let fitted = match cfg.model {
        ModelKind::Wmf | ModelKind::TwoStepWmf => als(fit_als(&wmf_targets(train, &hyper), &hyper, None, val).stage("fit")?),
        ModelKind::MvecfWmf => als(fit_mvecf_wmf(train, stats, &hyper, val).stage("fit")?),
        ModelKind::MvecfReg => als(fit_mvecf_reg(train, stats, &hyper, val).stage("fit")?),
        ModelKind::Bpr => bpr(fit_bpr(train, &ranking).stage("fit")?),
        ModelKind::BprNov => bpr(fit_bpr_nov(train, stats, &ranking).stage("fit")?),
        ModelKind::BprMvecfSampled => {
            let relabeled = mv_efficient_relabel(train, stats, &hyper, cfg.relabel.fraction).stage("relabel")?;
            log::info!(
                "relabeling: tau_s = {}, {} negatives -> positive, {} positives -> negative",
                relabeled.tau_s,
                relabeled.negatives_to_positive,
                relabeled.positives_to_negative
            );
            let mut fitted = bpr(fit_bpr(&relabeled.positives, &ranking).stage("fit")?);
            fitted.relabeled = Some(relabeled);
            fitted
        }
    };
    Ok(fitted)
}

fn two_step_lists(
    cfg: &ExperimentConfig,
    data: &SubDataset,
    model: &FactorModel,
    exclude: &InteractionMatrix,
) -> mvecf_core::Result<RecommendationList> {
    let k = cfg.eval.k;
    let lists: Vec<mvecf_core::Result<Vec<(usize, f64)>>> = (0..exclude.n_users())
        .into_par_iter()
        .map(|u| {
            let scores = model.predict(u)?;
            two_step_rerank_with(
                &scores,
                exclude.row(u),
                &data.stats,
                cfg.two_step.k_filter,
                k,
                cfg.hyper.gamma,
                SolverOptions::default(),
            )
            .map_err(|e| match e {
                Error::InsufficientUniverse { needed, available, .. } => {
                    Error::InsufficientUniverse { user: u, needed, available }
                }
                e => e,
            })
        })
        .collect();
    RecommendationList::new(lists.into_iter().collect::<mvecf_core::Result<_>>()?)
}

/// Recommendations excluding `exclude`, by the configured model kind.
pub fn recommend(
    cfg: &ExperimentConfig,
    data: &SubDataset,
    model: &FactorModel,
    exclude: &InteractionMatrix,
) -> Result<RecommendationList> {
    if model.n_users() != exclude.n_users() || model.n_items() != exclude.n_items() {
        return Err(CliError::Stage {
            stage: "recommend",
            source: Error::InvalidData(format!(
                "model is {}x{}, data is {}x{}",
                model.n_users(),
                model.n_items(),
                exclude.n_users(),
                exclude.n_items()
            )),
        });
    }
    match cfg.model {
        ModelKind::TwoStepWmf => two_step_lists(cfg, data, model, exclude),
        _ => eval::topk_recommend(model, exclude, cfg.eval.k),
    }
    .stage("recommend")
}

/// Both evaluation protocols for a fitted model; also returns the
/// recommendations that exclude every holding.
pub fn evaluate(cfg: &ExperimentConfig, data: &SubDataset, model: &FactorModel) -> Result<(EvalReport, RecommendationList)> {
    let (known, all) = eval::exclusion_sets(data).stage("evaluate")?;
    let ranking = recommend(cfg, data, model, &known)?;
    let portfolio = recommend(cfg, data, model, &all)?;
    let report = eval::evaluate(data, &ranking, &portfolio, cfg.eval.k, cfg.data.annualize).stage("evaluate")?;
    Ok((report, portfolio))
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    config_hash: String,
    seed: u64,
    model: &'a str,
    versions: BTreeMap<&'static str, &'static str>,
    model_format_version: u32,
    report_schema_version: u32,
    outputs: Vec<String>,
    config: &'a ExperimentConfig,
}

pub fn config_hash(cfg: &ExperimentConfig) -> String {
    hex::encode(Sha256::digest(canonical_json(cfg).as_bytes()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("serializable");
    text.push('\n');
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

pub fn write_manifest(dir: &Path, command: &str, cfg: &ExperimentConfig, outputs: &[&str]) -> Result<()> {
    let manifest = Manifest {
        command,
        config_hash: config_hash(cfg),
        seed: cfg.seed,
        model: cfg.model.name(),
        versions: BTreeMap::from([("mvecf", env!("CARGO_PKG_VERSION")), ("mvecf-core", mvecf_core::VERSION)]),
        model_format_version: model_io::FORMAT_VERSION,
        report_schema_version: eval::SCHEMA_VERSION,
        outputs: outputs.iter().map(|s| s.to_string()).collect(),
        config: cfg,
    };
    write_json(&dir.join("manifest.json"), &manifest)
}

fn unix_timestamp() -> String {
    let secs = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map_or(0, |d| d.as_secs());
    format!("unix:{secs}")
}

pub fn write_report(dir: &Path, report: &EvalReport) -> Result<()> {
    let stamped = EvalReport { timestamp: Some(unix_timestamp()), ..report.clone() };
    write_json(&dir.join("report.json"), &stamped)?;
    io::write_per_user(&dir.join("per_user.csv"), report)
}

/// Writes the model dump, loss trace and (for relabeling models) the
/// relabeled pairs; returns the file names.
pub fn write_fit(dir: &Path, data: &SubDataset, fitted: &Fitted) -> Result<Vec<&'static str>> {
    model_io::save(&dir.join("model.txt"), &fitted.model)?;
    io::write_loss_trace(&dir.join("loss_trace.csv"), &fitted.trace)?;
    let mut files = vec!["model.txt", "loss_trace.csv"];
    if let Some(r) = &fitted.relabeled {
        io::write_relabeled(&dir.join("relabeled.csv"), &data.train, r)?;
        files.push("relabeled.csv");
    }
    Ok(files)
}

/// Runs `body` against a fresh output directory. A failure leaves an
/// `INCOMPLETE` marker holding the error; success removes any stale marker.
pub fn with_output_dir<T>(dir: &Path, body: impl FnOnce(&Path) -> Result<T>) -> Result<T> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let marker = dir.join(INCOMPLETE);
    std::fs::write(&marker, "run in progress\n").map_err(|e| CliError::io(&marker, e))?;
    match body(dir) {
        Ok(v) => {
            std::fs::remove_file(&marker).map_err(|e| CliError::io(&marker, e))?;
            Ok(v)
        }
        Err(e) => {
            let _ = std::fs::write(&marker, format!("{e}\n"));
            Err(e)
        }
    }
}

/// The full pipeline for one configuration, writing into `dir`.
pub fn run_experiment(cfg: &ExperimentConfig, data: &SubDataset, dir: &Path) -> Result<EvalReport> {
    with_output_dir(dir, |dir| {
        let fitted = fit(cfg, data)?;
        let (report, recs) = evaluate(cfg, data, &fitted.model)?;
        let mut files = write_fit(dir, data, &fitted)?;
        io::write_recommendations(&dir.join("recommendations.csv"), &recs, &data.train)?;
        write_report(dir, &report)?;
        let row = SummaryRow::new(cfg.hyper.lambda_mv, cfg.hyper.gamma, &report);
        io::write_summary(&dir.join("summary_table.csv"), &[row])?;
        files.extend(["recommendations.csv", "report.json", "per_user.csv", "summary_table.csv"]);
        write_manifest(dir, "experiment", cfg, &files)?;
        Ok(report)
    })
}

/// Directory name of one sweep cell.
pub fn sweep_cell_name(lambda_mv: f64, gamma: f64) -> String {
    format!("lambda_mv={lambda_mv}_gamma={gamma}")
}

/// Runs every (λ_MV, γ) pair of the sweep lists, λ_MV outermost, and
/// writes the summary table.
pub fn run_sweep(cfg: &ExperimentConfig, data: &SubDataset, dir: &Path) -> Result<Vec<SummaryRow>> {
    if cfg.sweep.lambda_mv.is_empty() || cfg.sweep.gamma.is_empty() {
        return Err(CliError::Config("sweep.lambda_mv and sweep.gamma must be nonempty".into()));
    }
    with_output_dir(dir, |dir| {
        let mut rows = Vec::new();
        let mut files = vec!["summary_table.csv".to_string()];
        for &lambda_mv in &cfg.sweep.lambda_mv {
            for &gamma in &cfg.sweep.gamma {
                let mut cell = cfg.clone();
                cell.hyper.lambda_mv = lambda_mv;
                cell.hyper.gamma = gamma;
                cell.validate()?;
                let name = sweep_cell_name(lambda_mv, gamma);
                log::info!("sweep cell {name}");
                let report = run_experiment(&cell, data, &dir.join(&name))?;
                rows.push(SummaryRow::new(lambda_mv, gamma, &report));
                files.push(name);
            }
        }
        io::write_summary(&dir.join("summary_table.csv"), &rows)?;
        let names: Vec<&str> = files.iter().map(String::as_str).collect();
        write_manifest(dir, "sweep", cfg, &names)?;
        Ok(rows)
    })
}

/// Output directory: the config's unless overridden.
pub fn output_dir(cfg: &ExperimentConfig, over: Option<&Path>) -> PathBuf {
    over.map_or_else(|| cfg.output_dir.clone(), Path::to_path_buf)
}
