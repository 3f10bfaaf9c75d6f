//! Experiment configuration: a TOML file whose fields can each be
//! overridden on the command line with `--<dotted.name> <value>`.

use std::path::{Path, PathBuf};

use mvecf_core::market::Loading;
use mvecf_core::ranking::RankingConfig;
use mvecf_core::synth::SynthConfig;
use mvecf_core::Hyperparams;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Wmf,
    MvecfReg,
    MvecfWmf,
    Bpr,
    BprNov,
    BprMvecfSampled,
    TwoStepWmf,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::Wmf => "wmf",
            Self::MvecfReg => "mvecf_reg",
            Self::MvecfWmf => "mvecf_wmf",
            Self::Bpr => "bpr",
            Self::BprNov => "bpr_nov",
            Self::BprMvecfSampled => "bpr_mvecf_sampled",
            Self::TwoStepWmf => "two_step_wmf",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceKind {
    Synthetic,
    Csv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub source: SourceKind,
    /// Generator settings for `source = "synthetic"`. The generated history
    /// covers `t_periods` estimation periods followed by `post_years` of
    /// ex-post periods.
    pub synthetic: SynthConfig,
    /// Returns CSV for `source = "csv"`.
    pub returns: Option<PathBuf>,
    /// Directory of `holdings_<year>.csv` files for `source = "csv"`.
    pub holdings_dir: Option<PathBuf>,
    /// Holdings year. Synthetic data uses the last estimation year.
    pub year: Option<i32>,
    /// Estimation window length; synthetic data defaults to the whole
    /// generated history, CSV data to 5.
    pub est_years: Option<u32>,
    pub post_years: u32,
    pub periods_per_year: u32,
    pub min_holdings: usize,
    pub annualize: bool,
    pub loading: Loading,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            source: SourceKind::Synthetic,
            synthetic: SynthConfig::default(),
            returns: None,
            holdings_dir: None,
            year: None,
            est_years: None,
            post_years: 5,
            periods_per_year: 12,
            min_holdings: 1,
            annualize: true,
            loading: Loading::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub k: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { k: 20 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TwoStepConfig {
    /// Candidates kept from the base model before re-ranking.
    pub k_filter: usize,
}

impl Default for TwoStepConfig {
    fn default() -> Self {
        Self { k_filter: 50 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RelabelConfig {
    pub fraction: f64,
}

impl Default for RelabelConfig {
    fn default() -> Self {
        Self { fraction: 0.01 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub lambda_mv: Vec<f64>,
    pub gamma: Vec<f64>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self { lambda_mv: vec![0.1, 1.0, 10.0], gamma: vec![3.0] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Seeds model initialization, triple sampling and the data split;
    /// overrides `hyper.seed` and `ranking.seed`.
    pub seed: u64,
    pub model: ModelKind,
    pub output_dir: PathBuf,
    pub data: DataConfig,
    pub hyper: Hyperparams,
    pub ranking: RankingConfig,
    pub two_step: TwoStepConfig,
    pub relabel: RelabelConfig,
    pub eval: EvalConfig,
    pub sweep: SweepConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            model: ModelKind::MvecfWmf,
            output_dir: PathBuf::from("out"),
            data: DataConfig::default(),
            hyper: Hyperparams::default(),
            ranking: RankingConfig::default(),
            two_step: TwoStepConfig::default(),
            relabel: RelabelConfig::default(),
            eval: EvalConfig::default(),
            sweep: SweepConfig::default(),
        }
    }
}

impl ExperimentConfig {
    /// Parses TOML text after applying dotted overrides.
    pub fn from_toml(text: &str, overrides: &[(String, String)]) -> Result<Self> {
        let mut table: toml::Table = text.parse().map_err(|e: toml::de::Error| CliError::Config(e.to_string()))?;
        for (key, value) in overrides {
            apply_override(&mut table, key, value)?;
        }
        let cfg: Self = table.try_into().map_err(|e: toml::de::Error| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads `path` (or starts from defaults when `None`) and applies overrides.
    pub fn load(path: Option<&Path>, overrides: &[(String, String)]) -> Result<Self> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?,
            None => String::new(),
        };
        Self::from_toml(&text, overrides)
    }

    pub fn validate(&self) -> Result<()> {
        let cfg = |m: String| Err(CliError::Config(m));
        let d = &self.data;
        match d.source {
            SourceKind::Synthetic => {
                if d.returns.is_some() || d.holdings_dir.is_some() {
                    return cfg("data.returns / data.holdings_dir are only valid with data.source = \"csv\"".into());
                }
                d.synthetic.validate().map_err(|e| CliError::Config(e.to_string()))?;
                let ppy = d.synthetic.periods_per_year as usize;
                if !d.synthetic.t_periods.is_multiple_of(ppy) {
                    return cfg("data.synthetic.t_periods must be a whole number of years".into());
                }
            }
            SourceKind::Csv => {
                if d.returns.is_none() || d.holdings_dir.is_none() || d.year.is_none() {
                    return cfg("data.source = \"csv\" needs data.returns, data.holdings_dir and data.year".into());
                }
            }
        }
        if d.est_years == Some(0) {
            return cfg("data.est_years must be positive".into());
        }
        if d.periods_per_year == 0 {
            return cfg("data.periods_per_year must be positive".into());
        }
        self.hyper.validate().map_err(|e| CliError::Config(e.to_string()))?;
        self.ranking.validate().map_err(|e| CliError::Config(e.to_string()))?;
        if self.eval.k == 0 {
            return cfg("eval.k must be positive".into());
        }
        if self.two_step.k_filter < self.eval.k {
            return cfg("two_step.k_filter must be >= eval.k".into());
        }
        if !(self.relabel.fraction > 0.0 && self.relabel.fraction < 1.0) {
            return cfg("relabel.fraction must lie in (0, 1)".into());
        }
        Ok(())
    }

    /// Hyperparameters with the run seed applied.
    pub fn hyper(&self) -> Hyperparams {
        Hyperparams { seed: self.seed, ..self.hyper.clone() }
    }

    pub fn ranking(&self) -> RankingConfig {
        RankingConfig { seed: self.seed, ..self.ranking.clone() }
    }
}

fn parse_value(raw: &str) -> toml::Value {
    match format!("v = {raw}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

/// Sets `a.b.c = value`, creating intermediate tables.
pub fn apply_override(table: &mut toml::Table, key: &str, raw: &str) -> Result<()> {
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(CliError::Config(format!("invalid override key `{key}`")));
    }
    let (last, path) = parts.split_last().expect("nonempty");
    let mut cur = table;
    for p in path {
        let entry = cur.entry(p.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| CliError::Config(format!("override `{key}`: `{p}` is not a table")))?;
    }
    cur.insert(last.to_string(), parse_value(raw));
    Ok(())
}

/// Splits dotted `--a.b value` / `--a.b=value` flags out of an argument
/// list, returning the overrides and the remaining arguments.
/// Top-level scalar fields, overridable as `--seed`, `--model` and `--output_dir`.
const TOP_LEVEL_KEYS: [&str; 3] = ["seed", "model", "output_dir"];

/// `(key, raw value)` pairs in command-line order.
pub type Overrides = Vec<(String, String)>;

pub fn split_overrides(args: Vec<String>) -> Result<(Overrides, Vec<String>)> {
    let mut overrides = Vec::new();
    let mut rest = Vec::new();
    let mut it = args.into_iter();
    while let Some(arg) = it.next() {
        let dotted = arg
            .strip_prefix("--")
            .filter(|k| k.split('=').next().is_some_and(|name| name.contains('.') || TOP_LEVEL_KEYS.contains(&name)));
        match dotted {
            Some(flag) => {
                let (key, value) = match flag.split_once('=') {
                    Some((k, v)) => (k.to_string(), v.to_string()),
                    None => {
                        let v = it.next().ok_or_else(|| CliError::Config(format!("--{flag} needs a value")))?;
                        (flag.to_string(), v)
                    }
                };
                overrides.push((key, value));
            }
            None => rest.push(arg),
        }
    }
    Ok((overrides, rest))
}

/// Canonical JSON of the config, used for hashing.
pub fn canonical_json(cfg: &ExperimentConfig) -> String {
    serde_json::to_string(cfg).expect("config serializes")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_reference_operating_point() {
        let c = ExperimentConfig::default();
        assert_eq!(c.hyper.latent_dim, 30);
        assert_eq!(c.hyper.c_pos, 10.0);
        assert_eq!(c.hyper.lambda_reg, 0.001);
        assert_eq!(c.hyper.alpha, 0.001);
        assert_eq!(c.ranking.tau_dist, 0.9);
        assert_eq!(c.ranking.beta, 0.8);
        assert_eq!(c.eval.k, 20);
    }

    #[test]
    fn dotted_overrides() {
        let args = ["--hyper.lambda_mv", "0.5", "experiment", "--model=wmf", "--data.synthetic.seed=7", "--threads", "2"]
            .map(String::from)
            .to_vec();
        let (ov, rest) = split_overrides(args).unwrap();
        assert_eq!(
            ov,
            vec![
                ("hyper.lambda_mv".into(), "0.5".into()),
                ("model".into(), "wmf".into()),
                ("data.synthetic.seed".into(), "7".into())
            ]
        );
        assert_eq!(rest, ["experiment", "--threads", "2"]);
        let cfg = ExperimentConfig::from_toml("model = \"bpr\"", &ov).unwrap();
        assert_eq!(cfg.hyper.lambda_mv, 0.5);
        assert_eq!(cfg.data.synthetic.seed, 7);
        assert_eq!(cfg.model, ModelKind::Wmf);
    }

    #[test]
    fn string_and_list_overrides() {
        let ov = vec![("model".to_string(), "bpr_nov".to_string()), ("sweep.gamma".to_string(), "[1, 3, 5]".to_string())];
        let cfg = ExperimentConfig::from_toml("", &ov).unwrap();
        assert_eq!(cfg.model, ModelKind::BprNov);
        assert_eq!(cfg.sweep.gamma, vec![1.0, 3.0, 5.0]);
    }

    #[test]
    fn unknown_field_is_config_error() {
        let err = ExperimentConfig::from_toml("[hyper]\nlamda_mv = 1.0\n", &[]).unwrap_err();
        assert_eq!(err.exit_code(), crate::error::EXIT_CONFIG);
    }

    #[test]
    fn csv_source_needs_paths() {
        let err = ExperimentConfig::from_toml("[data]\nsource = \"csv\"\n", &[]).unwrap_err();
        assert!(matches!(err, CliError::Config(_)));
    }
}
