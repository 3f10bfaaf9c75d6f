use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use mvecf_core::eval;

use crate::config::{split_overrides, ExperimentConfig, SourceKind};
use crate::error::{CliError, Result, StageExt, EXIT_CONFIG};
use crate::{io, model_io, pipeline};

/// Mean-variance efficient collaborative filtering for stock recommendation.
///
/// Every config field can be overridden with a flag of the same dotted
/// name, e.g. `--model wmf`, `--hyper.lambda_mv 1` or `--data.synthetic.seed=7`.
#[derive(Debug, Parser)]
#[command(name = "mvecf", version)]
pub struct Cli {
    /// Worker threads for per-user work (results do not depend on it).
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    /// Log progress (repeat for more detail).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// TOML config file; defaults apply when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,

    /// Output directory (overrides `output_dir`).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Exclude {
    /// Every known holding (train, validation and test).
    All,
    /// Train and validation holdings only.
    Known,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write synthetic returns and holdings as CSV.
    Gen(RunArgs),
    /// Fit the configured model; writes the model dump and loss trace.
    Fit(RunArgs),
    /// Top-k recommendations from a saved model.
    Recommend {
        #[command(flatten)]
        run: RunArgs,
        /// Model dump written by `fit` or `experiment`.
        #[arg(long)]
        model_file: PathBuf,
        #[arg(long, value_enum, default_value_t = Exclude::All)]
        exclude: Exclude,
    },
    /// Evaluate a saved model.
    Eval {
        #[command(flatten)]
        run: RunArgs,
        /// Model dump written by `fit` or `experiment`.
        #[arg(long)]
        model_file: PathBuf,
    },
    /// Fit, recommend and evaluate in one run.
    Experiment(RunArgs),
    /// Run the experiment over the λ_MV × γ grid of `sweep`.
    Sweep(RunArgs),
}

fn load_config(run: &RunArgs, overrides: &[(String, String)]) -> Result<(ExperimentConfig, PathBuf)> {
    let cfg = ExperimentConfig::load(run.config.as_deref(), overrides)?;
    let dir = pipeline::output_dir(&cfg, run.out.as_deref());
    Ok((cfg, dir))
}

fn gen(cfg: &ExperimentConfig, dir: &Path) -> Result<()> {
    if cfg.data.source != SourceKind::Synthetic {
        return Err(CliError::Config("gen needs data.source = \"synthetic\"".into()));
    }
    pipeline::with_output_dir(dir, |dir| {
        let (panel, year, holdings) = pipeline::synthetic_raw(cfg)?;
        let holdings_name = format!("holdings_{year}.csv");
        io::write_returns(&dir.join("returns.csv"), &panel)?;
        io::write_holdings(&dir.join(&holdings_name), &holdings)?;
        pipeline::write_manifest(dir, "gen", cfg, &["returns.csv", &holdings_name])
    })
}

pub fn execute(command: Command, overrides: &[(String, String)]) -> Result<()> {
    match command {
        Command::Gen(run) => {
            let (cfg, dir) = load_config(&run, overrides)?;
            gen(&cfg, &dir)
        }
        Command::Fit(run) => {
            let (cfg, dir) = load_config(&run, overrides)?;
            pipeline::with_output_dir(&dir, |dir| {
                let data = pipeline::load_data(&cfg)?;
                let fitted = pipeline::fit(&cfg, &data)?;
                let files = pipeline::write_fit(dir, &data, &fitted)?;
                pipeline::write_manifest(dir, "fit", &cfg, &files)
            })
        }
        Command::Recommend { run, model_file, exclude } => {
            let (cfg, dir) = load_config(&run, overrides)?;
            pipeline::with_output_dir(&dir, |dir| {
                let data = pipeline::load_data(&cfg)?;
                let model = model_io::load(&model_file)?;
                let (known, all) = eval::exclusion_sets(&data).stage("recommend")?;
                let exclude = match exclude {
                    Exclude::All => all,
                    Exclude::Known => known,
                };
                let recs = pipeline::recommend(&cfg, &data, &model, &exclude)?;
                io::write_recommendations(&dir.join("recommendations.csv"), &recs, &exclude)?;
                pipeline::write_manifest(dir, "recommend", &cfg, &["recommendations.csv"])
            })
        }
        Command::Eval { run, model_file } => {
            let (cfg, dir) = load_config(&run, overrides)?;
            pipeline::with_output_dir(&dir, |dir| {
                let data = pipeline::load_data(&cfg)?;
                let model = model_io::load(&model_file)?;
                let (report, _) = pipeline::evaluate(&cfg, &data, &model)?;
                pipeline::write_report(dir, &report)?;
                let row = io::SummaryRow::new(cfg.hyper.lambda_mv, cfg.hyper.gamma, &report);
                io::write_summary(&dir.join("summary_table.csv"), &[row])?;
                pipeline::write_manifest(dir, "eval", &cfg, &["report.json", "per_user.csv", "summary_table.csv"])
            })
        }
        Command::Experiment(run) => {
            let (cfg, dir) = load_config(&run, overrides)?;
            let data = pipeline::with_output_dir(&dir, |_| pipeline::load_data(&cfg))?;
            pipeline::run_experiment(&cfg, &data, &dir).map(drop)
        }
        Command::Sweep(run) => {
            let (cfg, dir) = load_config(&run, overrides)?;
            let data = pipeline::with_output_dir(&dir, |_| pipeline::load_data(&cfg))?;
            pipeline::run_sweep(&cfg, &data, &dir).map(drop)
        }
    }
}

/// Parses `args` (without the program name), runs the command and returns
/// the process exit code.
pub fn main_with_args(args: Vec<String>) -> i32 {
    let (overrides, rest) = match split_overrides(args) {
        Ok(v) => v,
        Err(e) => {
            eprintln!("error: {e}");
            return e.exit_code();
        }
    };
    let cli = match Cli::try_parse_from(std::iter::once("mvecf".to_string()).chain(rest)) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { 0 };
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    let _ = env_logger::Builder::new().filter_level(level).parse_default_env().try_init();

    let threads = cli.threads.unwrap_or(0);
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(threads).build() {
        Ok(pool) => pool,
        Err(e) => {
            eprintln!("error: thread pool: {e}");
            return EXIT_CONFIG;
        }
    };
    match pool.install(|| execute(cli.command, &overrides)) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
