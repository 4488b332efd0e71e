//! Command-line front end: training, both test protocols, statistics and
//! plot-ready reports.

pub mod config;
mod report;
mod stats;

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use pcgeval::checkpoint::CheckpointError;
use pcgeval::evaltests::{
    iqr_filter, read_results, scenario_test, score_checkpoint, select_best_instances, write_results, EvalError,
    Instance, ResultRow, ScenarioSettings,
};
use pcgeval::harness::{checkpoint_path, run_id, train_all, HarnessError, Manifest, MANIFEST_FILE};
use pcgeval::pcg::PcgVersion;

pub use config::RunConfig;

pub const COMPREHENSIVE_FILE: &str = "comprehensive.csv";
pub const BEST_FILE: &str = "best_instances.csv";
pub const SCENARIO_RAW_FILE: &str = "scenario_raw.csv";
pub const SCENARIO_FILTERED_FILE: &str = "scenario_filtered.csv";
pub const REPORT_DIR: &str = "report";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("config {path}: {message}")]
    Config { path: PathBuf, message: String },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Harness(#[from] HarnessError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Stats(#[from] pcgeval_stats::StatsError),
    #[error("{0}")]
    Failed(String),
}

impl CliError {
    /// 1 for usage and configuration problems, 2 for everything at run time.
    pub fn exit_code(&self) -> u8 {
        match self {
            Self::Usage(_) | Self::Config { .. } => 1,
            _ => 2,
        }
    }
}

pub(crate) fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io { path: path.to_path_buf(), source }
}

#[derive(Debug, Parser)]
#[command(name = "pcgeval", version, about = "Train and test duel agents against evolving NPC generators")]
pub struct Cli {
    /// TOML configuration file; its values override the built-in defaults.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Output root [default: $PCGEVAL_OUT, else "runs"].
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train one agent per (seed, version) and write metrics, checkpoints and a manifest.
    Train(TrainArgs),
    /// Score every checkpoint against all 35 attribute combinations and pick the best per run.
    Comprehensive(ComprehensiveArgs),
    /// Pit the best instances against generator-produced opponents, with IQR outlier removal.
    Scenario(ScenarioArgs),
    /// Rank tests over result files.
    Stats(StatsArgs),
    /// Write plot-ready CSV files (and optionally SVG charts) from training and test outputs.
    Report(ReportArgs),
    /// Print the effective configuration as TOML.
    Config,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Generator versions, comma separated [default: 1,2,3].
    #[arg(long, value_delimiter = ',')]
    pub versions: Option<Vec<PcgVersion>>,
    /// Number of seeds; runs use seeds 0..N [default: 5].
    #[arg(long, value_name = "N")]
    pub seeds: Option<u64>,
    /// Agent actions per run [default: 50000].
    #[arg(long)]
    pub sgas: Option<u64>,
    /// Checkpoint interval in actions [default: 10000].
    #[arg(long)]
    pub checkpoint_every: Option<u64>,
    /// Metrics interval in actions [default: 500].
    #[arg(long)]
    pub metrics_every: Option<u64>,
    /// Train runs concurrently [default: false].
    #[arg(long)]
    pub parallel: bool,
    /// Continue runs from their latest checkpoint [default: false].
    #[arg(long)]
    pub resume: bool,
}

#[derive(Debug, Args)]
pub struct ComprehensiveArgs {
    /// Training output root holding the manifest [default: the output root].
    #[arg(long, value_name = "DIR")]
    pub runs: Option<PathBuf>,
    /// Duels per attribute combination [default: 5].
    #[arg(long)]
    pub repeats: Option<u32>,
    /// Seed for opponent orderings and duel shuffles [default: 0].
    #[arg(long)]
    pub eval_seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct ScenarioArgs {
    /// Best-instance file from `comprehensive` [default: <out>/best_instances.csv].
    #[arg(long, value_name = "FILE")]
    pub instances: Option<PathBuf>,
    /// Training output root holding the checkpoints [default: the output root].
    #[arg(long, value_name = "DIR")]
    pub runs: Option<PathBuf>,
    /// Opponent generator versions, comma separated [default: v1,v2].
    #[arg(long, value_delimiter = ',')]
    pub source: Option<Vec<PcgVersion>>,
    /// Opponents per instance and source [default: 1000].
    #[arg(long)]
    pub duels: Option<u32>,
    /// Seed of the opponent generator [default: 0].
    #[arg(long)]
    pub eval_seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TestKind {
    /// Pairwise Mann-Whitney U
    Mwu,
    /// Kruskal-Wallis H over all groups
    Kw,
    /// Shapiro-Wilk per group
    Sw,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Grouping {
    /// Agent training version
    Version,
    /// Opponent source
    Source,
    /// Training version and opponent source
    VersionSource,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MwuModeArg {
    Auto,
    Exact,
    Asymptotic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Text,
    Json,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    /// Result CSV files, comma separated.
    #[arg(long, value_delimiter = ',', required = true, value_name = "FILE")]
    pub inputs: Vec<PathBuf>,
    #[arg(long, value_enum)]
    pub test: TestKind,
    #[arg(long, value_enum, default_value_t = Grouping::Version)]
    pub groups: Grouping,
    /// p-value mode for Mann-Whitney U.
    #[arg(long, value_enum, default_value_t = MwuModeArg::Auto)]
    pub mwu_mode: MwuModeArg,
    /// Include rows removed as outliers.
    #[arg(long)]
    pub include_removed: bool,
    #[arg(long, value_enum, default_value_t = Format::Text)]
    pub format: Format,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Directory with the manifest and test results [default: the output root].
    /// Files go to <out>/report.
    #[arg(long = "in", value_name = "DIR")]
    pub input: Option<PathBuf>,
    /// Also render SVG charts.
    #[arg(long)]
    pub svg: bool,
}

/// Effective configuration for `cli`: defaults, environment, file, flags.
pub fn effective_config(cli: &Cli, env_out: Option<PathBuf>) -> Result<RunConfig, CliError> {
    let mut cfg = RunConfig::resolve(cli.config.as_deref(), env_out)?;
    if let Some(out) = &cli.out {
        cfg.out = out.clone();
    }
    match &cli.command {
        Command::Train(a) => {
            let t = &mut cfg.train;
            if let Some(v) = &a.versions {
                t.versions = v.clone();
            }
            t.seeds = a.seeds.unwrap_or(t.seeds);
            t.sgas = a.sgas.unwrap_or(t.sgas);
            t.checkpoint_every = a.checkpoint_every.unwrap_or(t.checkpoint_every);
            t.metrics_every = a.metrics_every.unwrap_or(t.metrics_every);
            t.parallel |= a.parallel;
            t.resume |= a.resume;
        }
        Command::Comprehensive(a) => {
            cfg.tests.repeats = a.repeats.unwrap_or(cfg.tests.repeats);
            cfg.tests.eval_seed = a.eval_seed.unwrap_or(cfg.tests.eval_seed);
        }
        Command::Scenario(a) => {
            if let Some(s) = &a.source {
                cfg.tests.scenario_sources = s.clone();
            }
            cfg.tests.scenario_duels = a.duels.unwrap_or(cfg.tests.scenario_duels);
            cfg.tests.eval_seed = a.eval_seed.unwrap_or(cfg.tests.eval_seed);
        }
        Command::Stats(_) | Command::Report(_) | Command::Config => {}
    }
    Ok(cfg)
}

pub fn run(cli: Cli, env_out: Option<PathBuf>) -> Result<(), CliError> {
    let cfg = effective_config(&cli, env_out)?;
    match cli.command {
        Command::Train(_) => train(&cfg),
        Command::Comprehensive(a) => comprehensive(&cfg, a.runs.as_deref().unwrap_or(&cfg.out)),
        Command::Scenario(a) => {
            let best = a.instances.unwrap_or_else(|| cfg.out.join(BEST_FILE));
            scenario(&cfg, &best, a.runs.as_deref().unwrap_or(&cfg.out))
        }
        Command::Stats(a) => {
            let text = stats::run(&a)?;
            print!("{text}");
            Ok(())
        }
        Command::Report(a) => {
            let input = a.input.unwrap_or_else(|| cfg.out.clone());
            let written = report::write_report(&input, &cfg.out.join(REPORT_DIR), a.svg)?;
            for path in written {
                println!("{}", path.display());
            }
            Ok(())
        }
        Command::Config => {
            print!("{}", cfg.to_toml());
            Ok(())
        }
    }
}

fn train(cfg: &RunConfig) -> Result<(), CliError> {
    let plan = cfg.training_plan();
    plan.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let manifest = train_all(&plan, cfg.train.parallel)?;
    let failed: Vec<String> = manifest
        .failures()
        .map(|r| format!("{}: {}", r.run_id, r.error.as_deref().unwrap_or("unknown error")))
        .collect();
    println!(
        "{} runs, {} failed; manifest at {}",
        manifest.runs.len(),
        failed.len(),
        plan.out_dir.join(MANIFEST_FILE).display()
    );
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Failed(failed.join("\n")))
    }
}

fn load_manifest(runs: &Path) -> Result<Manifest, CliError> {
    let path = runs.join(MANIFEST_FILE);
    if !path.exists() {
        return Err(CliError::Failed(format!("no training manifest at {}", path.display())));
    }
    Ok(Manifest::load(&path)?)
}

fn comprehensive(cfg: &RunConfig, runs: &Path) -> Result<(), CliError> {
    let manifest = load_manifest(runs)?;
    let mut scores = Vec::new();
    for run in manifest.runs.iter().filter(|r| r.error.is_none()) {
        for ckpt in &run.checkpoints {
            let s = score_checkpoint(&runs.join(&ckpt.path), run.seed, cfg.duel, cfg.tests.repeats, cfg.tests.eval_seed)?;
            scores.push(s);
        }
    }
    let best = select_best_instances(&scores)?;
    std::fs::create_dir_all(&cfg.out).map_err(io_err(&cfg.out))?;
    let rows: Vec<ResultRow> = scores.iter().map(ResultRow::from).collect();
    write_results(&cfg.out.join(COMPREHENSIVE_FILE), &rows)?;
    let best_rows: Vec<ResultRow> = best.iter().map(ResultRow::from).collect();
    write_results(&cfg.out.join(BEST_FILE), &best_rows)?;
    println!("scored {} checkpoints, {} best instances", scores.len(), best.len());
    for b in &best {
        println!("{} win rate {:.4}", b.instance_id(), b.win_rate);
    }
    Ok(())
}

fn scenario(cfg: &RunConfig, best: &Path, runs: &Path) -> Result<(), CliError> {
    if !best.exists() {
        return Err(CliError::Failed(format!("no best-instance file at {}", best.display())));
    }
    let instances = read_results(best)?
        .iter()
        .map(|row| {
            let path = checkpoint_path(&runs.join(run_id(row.seed, row.version)), row.checkpoint_sga);
            Instance::load(&path, row.seed)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let settings = ScenarioSettings {
        duels: cfg.tests.scenario_duels,
        seed: cfg.tests.eval_seed,
        duel: cfg.duel,
        ga: cfg.ga,
        reward: cfg.reward,
    };
    let mut results = Vec::new();
    for &source in &cfg.tests.scenario_sources {
        results.extend(scenario_test(&instances, source, &settings)?);
    }
    let filtered = iqr_filter(&results)?;
    std::fs::create_dir_all(&cfg.out).map_err(io_err(&cfg.out))?;
    let raw: Vec<ResultRow> = filtered.results.iter().map(ResultRow::from).collect();
    write_results(&cfg.out.join(SCENARIO_RAW_FILE), &raw)?;
    let kept: Vec<ResultRow> = filtered.retained().map(ResultRow::from).collect();
    write_results(&cfg.out.join(SCENARIO_FILTERED_FILE), &kept)?;
    println!("{} results, {} retained", raw.len(), kept.len());
    let removed: Vec<String> = filtered.removed_seeds.iter().map(u64::to_string).collect();
    println!("outlier seeds removed: {}", if removed.is_empty() { "none".into() } else { removed.join(",") });
    Ok(())
}
