//! Training orchestration and the metrics logger.

use std::collections::{BTreeSet, VecDeque};
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointError};
use crate::duel::{DuelConfig, Outcome, NUM_ATTRS};
use crate::interact::{DuelEnv, EnvError, RewardConfig};
use crate::pcg::{GaParams, PcgVersion};
use crate::ppo::{Learner, NetworkArch, PpoError, PpoHyperparams};

pub const METRICS_HEADER: &str =
    "sga,games_window,wins_window,win_rate_window,cum_reward,games_total,wins_total,attr0,attr1,attr2,attr3,attr4,attr5,attr6";
pub const METRICS_FILE: &str = "metrics.csv";
pub const CHECKPOINT_DIR: &str = "checkpoints";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("invalid training plan: {0}")]
    Plan(String),
    #[error("I/O on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed metrics file {path}: {msg}")]
    Metrics { path: PathBuf, msg: String },
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Agent(#[from] PpoError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("metrics runs disagree on tick grid: {0}")]
    TickGrid(String),
    #[error("manifest: {0}")]
    Manifest(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io { path: path.to_path_buf(), source }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingPlan {
    pub seeds: Vec<u64>,
    pub versions: Vec<PcgVersion>,
    pub total_sgas: u64,
    pub checkpoint_every: u64,
    pub metrics_every: u64,
    /// Number of most recent NPCs behind the attribute frequencies.
    pub attr_window: usize,
    pub out_dir: PathBuf,
    /// Continue from the newest checkpoint of a run when one exists.
    pub resume: bool,
    pub duel: DuelConfig,
    pub ga: GaParams,
    pub reward: RewardConfig,
    pub ppo: PpoHyperparams,
    pub arch: NetworkArch,
}

impl Default for TrainingPlan {
    fn default() -> Self {
        Self {
            seeds: (0..5).collect(),
            versions: PcgVersion::ALL.to_vec(),
            total_sgas: 50_000,
            checkpoint_every: 10_000,
            metrics_every: 500,
            attr_window: 200,
            out_dir: PathBuf::from("runs"),
            resume: false,
            duel: DuelConfig::default(),
            ga: GaParams::default(),
            reward: RewardConfig::default(),
            ppo: PpoHyperparams::default(),
            arch: NetworkArch::default(),
        }
    }
}

impl TrainingPlan {
    pub fn full_scale() -> Self {
        Self { seeds: (0..20).collect(), total_sgas: 1_000_000, ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let err = |m: String| Err(HarnessError::Plan(m));
        if self.total_sgas == 0 {
            return err("total_sgas must be positive".into());
        }
        for (name, every) in [("checkpoint_every", self.checkpoint_every), ("metrics_every", self.metrics_every)] {
            if every == 0 || self.total_sgas % every != 0 {
                return err(format!("{name} = {every} does not divide total_sgas = {}", self.total_sgas));
            }
        }
        if self.seeds.is_empty() || self.versions.is_empty() {
            return err("at least one seed and one version are required".into());
        }
        if self.seeds.iter().collect::<BTreeSet<_>>().len() != self.seeds.len() {
            return err("seeds must be distinct".into());
        }
        if self.versions.iter().collect::<BTreeSet<_>>().len() != self.versions.len() {
            return err("versions must be distinct".into());
        }
        if self.attr_window == 0 {
            return err("attr_window must be positive".into());
        }
        self.duel.validate().map_err(|e| HarnessError::Plan(e.to_string()))?;
        self.ga.validate().map_err(|e| HarnessError::Plan(e.to_string()))?;
        self.reward.validate().map_err(HarnessError::Plan)?;
        self.ppo.validate().map_err(|e| HarnessError::Plan(e.to_string()))?;
        if self.arch.input_dim != crate::interact::OBS_DIM || self.arch.n_actions != crate::duel::NUM_ACTIONS {
            return err(format!("network must map {} inputs to {} actions", crate::interact::OBS_DIM, crate::duel::NUM_ACTIONS));
        }
        Ok(())
    }

    pub fn checkpoints_per_run(&self) -> u64 {
        self.total_sgas / self.checkpoint_every
    }

    pub fn metrics_rows_per_run(&self) -> u64 {
        self.total_sgas / self.metrics_every
    }

    pub fn run_dir(&self, seed: u64, version: PcgVersion) -> PathBuf {
        self.out_dir.join(run_id(seed, version))
    }
}

pub fn run_id(seed: u64, version: PcgVersion) -> String {
    format!("{version}_seed{seed}")
}

pub fn checkpoint_path(run_dir: &Path, sga: u64) -> PathBuf {
    run_dir.join(CHECKPOINT_DIR).join(format!("ckpt_{sga:09}.bin"))
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRecord {
    pub sga: u64,
    pub games_window: u64,
    pub wins_window: u64,
    /// `None` when no duel finished inside the window.
    pub win_rate_window: Option<f64>,
    pub cum_reward: f64,
    pub games_total: u64,
    pub wins_total: u64,
    pub attr_freq: [f64; NUM_ATTRS],
}

impl MetricsRecord {
    pub fn to_csv_line(&self) -> String {
        let mut s = format!("{},{},{},", self.sga, self.games_window, self.wins_window);
        if let Some(w) = self.win_rate_window {
            s += &w.to_string();
        }
        s += &format!(",{},{},{}", self.cum_reward, self.games_total, self.wins_total);
        for f in self.attr_freq {
            s += &format!(",{f}");
        }
        s
    }

    fn from_record(rec: &csv::StringRecord) -> Result<Self, String> {
        if rec.len() != 7 + NUM_ATTRS {
            return Err(format!("expected {} fields, found {}", 7 + NUM_ATTRS, rec.len()));
        }
        fn num<T: std::str::FromStr>(s: &str) -> Result<T, String> {
            s.parse().map_err(|_| format!("bad number {s:?}"))
        }
        let win_rate_window = if rec[3].is_empty() { None } else { Some(num(&rec[3])?) };
        let mut attr_freq = [0.0; NUM_ATTRS];
        for (a, f) in attr_freq.iter_mut().enumerate() {
            *f = num(&rec[7 + a])?;
        }
        Ok(Self {
            sga: num(&rec[0])?,
            games_window: num(&rec[1])?,
            wins_window: num(&rec[2])?,
            win_rate_window,
            cum_reward: num(&rec[4])?,
            games_total: num(&rec[5])?,
            wins_total: num(&rec[6])?,
            attr_freq,
        })
    }
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRecord>, HarnessError> {
    let bad = |msg: String| HarnessError::Metrics { path: path.to_path_buf(), msg };
    let mut rdr = csv::Reader::from_path(path).map_err(|e| bad(e.to_string()))?;
    let header = rdr.headers().map_err(|e| bad(e.to_string()))?.iter().collect::<Vec<_>>().join(",");
    if header != METRICS_HEADER {
        return Err(bad(format!("unexpected header {header:?}")));
    }
    rdr.records()
        .map(|r| r.map_err(|e| bad(e.to_string())).and_then(|r| MetricsRecord::from_record(&r).map_err(bad)))
        .collect()
}

/// Running counters behind the metrics rows.
#[derive(Debug, Clone, PartialEq)]
pub struct LoggerState {
    pub games_window: u64,
    pub wins_window: u64,
    pub games_total: u64,
    pub wins_total: u64,
    pub cum_reward: f64,
    pub attr_window: usize,
    /// Attribute masks of the most recent NPCs, oldest first.
    pub recent: VecDeque<u8>,
}

impl LoggerState {
    pub fn new(attr_window: usize) -> Self {
        Self {
            games_window: 0,
            wins_window: 0,
            games_total: 0,
            wins_total: 0,
            cum_reward: 0.0,
            attr_window,
            recent: VecDeque::with_capacity(attr_window),
        }
    }

    pub fn observe_npc(&mut self, mask: u8) {
        if self.recent.len() == self.attr_window {
            self.recent.pop_front();
        }
        self.recent.push_back(mask);
    }

    pub fn observe_step(&mut self, reward: f64, outcome: Option<Outcome>) {
        self.cum_reward += reward;
        if let Some(o) = outcome {
            self.games_window += 1;
            self.games_total += 1;
            if o == Outcome::Win {
                self.wins_window += 1;
                self.wins_total += 1;
            }
        }
    }

    pub fn attr_freq(&self) -> [f64; NUM_ATTRS] {
        let mut f = [0.0; NUM_ATTRS];
        if self.recent.is_empty() {
            return f;
        }
        for &m in &self.recent {
            for (a, x) in f.iter_mut().enumerate() {
                if m & (1 << a) != 0 {
                    *x += 1.0;
                }
            }
        }
        f.map(|x| x / self.recent.len() as f64)
    }

    /// Emits a row and opens a new window.
    pub fn record(&mut self, sga: u64) -> MetricsRecord {
        let rec = MetricsRecord {
            sga,
            games_window: self.games_window,
            wins_window: self.wins_window,
            win_rate_window: (self.games_window > 0).then(|| self.wins_window as f64 / self.games_window as f64),
            cum_reward: self.cum_reward,
            games_total: self.games_total,
            wins_total: self.wins_total,
            attr_freq: self.attr_freq(),
        };
        self.games_window = 0;
        self.wins_window = 0;
        rec
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Artifact {
    /// Relative to the plan's output directory.
    pub path: PathBuf,
    pub sha256: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sga: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunEntry {
    pub run_id: String,
    pub seed: u64,
    pub version: PcgVersion,
    /// `None` on success, otherwise the failure message.
    pub error: Option<String>,
    pub metrics: Option<Artifact>,
    pub checkpoints: Vec<Artifact>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub plan: TrainingPlan,
    pub runs: Vec<RunEntry>,
}

impl Manifest {
    pub fn save(&self, path: &Path) -> Result<(), HarnessError> {
        let json = serde_json::to_string_pretty(self).map_err(|e| HarnessError::Manifest(e.to_string()))?;
        fs::write(path, json + "\n").map_err(io_err(path))
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        serde_json::from_str(&text).map_err(|e| HarnessError::Manifest(e.to_string()))
    }

    pub fn failures(&self) -> impl Iterator<Item = &RunEntry> {
        self.runs.iter().filter(|r| r.error.is_some())
    }
}

pub fn sha256_file(path: &Path) -> Result<String, HarnessError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    Ok(hex::encode(Sha256::digest(bytes)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub run_dir: PathBuf,
    pub metrics_path: PathBuf,
    /// `(sga, path)` for every checkpoint of the run, in order.
    pub checkpoints: Vec<(u64, PathBuf)>,
}

fn fresh_start(seed: u64, version: PcgVersion, plan: &TrainingPlan) -> Result<(Learner, DuelEnv, LoggerState), HarnessError> {
    let learner = Learner::new(seed, plan.arch.clone(), plan.ppo)?;
    let env = DuelEnv::new(version, plan.ga, plan.duel, plan.reward, seed)?;
    let mut logger = LoggerState::new(plan.attr_window);
    logger.observe_npc(env.current_profile().mask());
    Ok((learner, env, logger))
}

fn latest_checkpoint(run_dir: &Path, total: u64, every: u64) -> Option<(u64, PathBuf)> {
    (1..=total / every).rev().map(|k| (k * every, checkpoint_path(run_dir, k * every))).find(|(_, p)| p.is_file())
}

/// Keeps the header and the rows up to `sga`, byte for byte.
fn truncate_metrics(path: &Path, sga: u64) -> Result<(), HarnessError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let mut kept = String::new();
    for (i, line) in text.lines().enumerate() {
        let keep = i == 0
            || line.split(',').next().and_then(|f| f.parse::<u64>().ok()).is_some_and(|s| s <= sga);
        if keep {
            kept.push_str(line);
            kept.push('\n');
        }
    }
    fs::write(path, kept).map_err(io_err(path))
}

/// Trains one agent against one generator version, writing metrics rows and
/// checkpoints under the run directory.
pub fn train_one(seed: u64, version: PcgVersion, plan: &TrainingPlan) -> Result<RunOutput, HarnessError> {
    plan.validate()?;
    let run_dir = plan.run_dir(seed, version);
    let ckpt_dir = run_dir.join(CHECKPOINT_DIR);
    fs::create_dir_all(&ckpt_dir).map_err(io_err(&ckpt_dir))?;
    let metrics_path = run_dir.join(METRICS_FILE);

    let resumed = if plan.resume && metrics_path.is_file() {
        latest_checkpoint(&run_dir, plan.total_sgas, plan.checkpoint_every)
    } else {
        None
    };
    let (mut learner, mut env, mut logger) = match &resumed {
        Some((sga, path)) => {
            let ckpt = load_checkpoint(path)?;
            if ckpt.sga_count != *sga || ckpt.pcg.version != version {
                return Err(CheckpointError::Corrupt(format!("{} does not belong to this run", path.display())).into());
            }
            truncate_metrics(&metrics_path, *sga)?;
            ckpt.into_training()?
        }
        None => fresh_start(seed, version, plan)?,
    };

    let file = if resumed.is_some() {
        fs::OpenOptions::new().append(true).open(&metrics_path)
    } else {
        File::create(&metrics_path)
    }
    .map_err(io_err(&metrics_path))?;
    let mut out = BufWriter::new(file);
    if resumed.is_none() {
        writeln!(out, "{METRICS_HEADER}").map_err(io_err(&metrics_path))?;
    }

    let mut checkpoints: Vec<(u64, PathBuf)> = (1..=env.sga_count() / plan.checkpoint_every)
        .map(|k| (k * plan.checkpoint_every, checkpoint_path(&run_dir, k * plan.checkpoint_every)))
        .collect();

    while env.sga_count() < plan.total_sgas {
        let spawned = env.spawned();
        let step = learner.step(&mut env)?;
        logger.observe_step(step.reward, step.info.outcome);
        if env.spawned() != spawned {
            logger.observe_npc(env.current_profile().mask());
        }
        let sga = env.sga_count();
        if sga % plan.metrics_every == 0 {
            writeln!(out, "{}", logger.record(sga).to_csv_line()).map_err(io_err(&metrics_path))?;
        }
        if sga % plan.checkpoint_every == 0 {
            out.flush().map_err(io_err(&metrics_path))?;
            let path = checkpoint_path(&run_dir, sga);
            save_checkpoint(&Checkpoint::capture(&learner, &env, &logger), &path)?;
            checkpoints.push((sga, path));
        }
    }
    out.flush().map_err(io_err(&metrics_path))?;
    Ok(RunOutput { run_dir, metrics_path, checkpoints })
}

fn describe(plan: &TrainingPlan, path: &Path, sga: Option<u64>) -> Result<Artifact, HarnessError> {
    Ok(Artifact {
        path: path.strip_prefix(&plan.out_dir).unwrap_or(path).to_path_buf(),
        sha256: sha256_file(path)?,
        sga,
    })
}

/// Trains every (seed, version) pair and writes a manifest. A failed run is
/// recorded and does not stop the others.
pub fn train_all(plan: &TrainingPlan, parallel: bool) -> Result<Manifest, HarnessError> {
    plan.validate()?;
    fs::create_dir_all(&plan.out_dir).map_err(io_err(&plan.out_dir))?;
    let pairs: Vec<(u64, PcgVersion)> =
        plan.seeds.iter().flat_map(|&s| plan.versions.iter().map(move |&v| (s, v))).collect();
    let run = |&(seed, version): &(u64, PcgVersion)| -> RunEntry {
        let mut entry =
            RunEntry { run_id: run_id(seed, version), seed, version, error: None, metrics: None, checkpoints: Vec::new() };
        let described = train_one(seed, version, plan).and_then(|out| {
            let metrics = describe(plan, &out.metrics_path, None)?;
            let ckpts = out
                .checkpoints
                .iter()
                .map(|(sga, p)| describe(plan, p, Some(*sga)))
                .collect::<Result<Vec<_>, _>>()?;
            Ok((metrics, ckpts))
        });
        match described {
            Ok((m, c)) => {
                entry.metrics = Some(m);
                entry.checkpoints = c;
            }
            Err(e) => entry.error = Some(e.to_string()),
        }
        entry
    };
    let runs = if parallel { pairs.par_iter().map(run).collect() } else { pairs.iter().map(run).collect() };
    let manifest = Manifest { plan: plan.clone(), runs };
    manifest.save(&plan.out_dir.join(MANIFEST_FILE))?;
    Ok(manifest)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    /// Sample standard deviation; zero for a single value.
    pub fn of(xs: &[f64]) -> Option<Self> {
        if xs.is_empty() {
            return None;
        }
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let std = if xs.len() > 1 { (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt() } else { 0.0 };
        Some(Self { mean, std })
    }
}

/// Per-tick spread across agents; `None` where no agent had a value.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Band {
    pub sga: u64,
    pub min: Option<f64>,
    pub median: Option<f64>,
    pub max: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VersionSummary {
    pub version: PcgVersion,
    pub runs: usize,
    pub total_games: u64,
    pub total_wins: u64,
    /// Pooled reward per game of each run, then mean and std across runs.
    pub avg_reward_per_game: Option<MeanStd>,
    pub avg_win_rate: Option<MeanStd>,
    pub win_rate_curve: Vec<Band>,
    pub cum_reward_curve: Vec<Band>,
    /// Median across agents of each attribute's appearance rate, per tick.
    pub attr_freq_curve: Vec<(u64, [f64; NUM_ATTRS])>,
}

fn band(sga: u64, mut xs: Vec<f64>) -> Band {
    if xs.is_empty() {
        return Band { sga, min: None, median: None, max: None };
    }
    xs.sort_by(f64::total_cmp);
    Band { sga, min: xs.first().copied(), median: pcgeval_stats::median(&xs).ok(), max: xs.last().copied() }
}

/// Aggregates metrics of several runs per version.
pub fn summarize_training(runs: &[(PcgVersion, Vec<MetricsRecord>)]) -> Result<Vec<VersionSummary>, HarnessError> {
    let versions: BTreeSet<PcgVersion> = runs.iter().map(|(v, _)| *v).collect();
    let mut out = Vec::new();
    for version in versions {
        let group: Vec<&Vec<MetricsRecord>> = runs.iter().filter(|(v, _)| *v == version).map(|(_, m)| m).collect();
        let ticks: Vec<u64> = group[0].iter().map(|r| r.sga).collect();
        if ticks.is_empty() {
            return Err(HarnessError::TickGrid(format!("{version} run with no rows")));
        }
        for g in &group {
            if g.len() != ticks.len() || g.iter().zip(&ticks).any(|(r, t)| r.sga != *t) {
                return Err(HarnessError::TickGrid(format!("{version} runs use different ticks")));
            }
        }
        let last: Vec<&MetricsRecord> = group.iter().map(|g| g.last().expect("non-empty")).collect();
        let played: Vec<&&MetricsRecord> = last.iter().filter(|r| r.games_total > 0).collect();
        let per_game: Vec<f64> = played.iter().map(|r| r.cum_reward / r.games_total as f64).collect();
        let win_rates: Vec<f64> = played.iter().map(|r| r.wins_total as f64 / r.games_total as f64).collect();

        let mut win_rate_curve = Vec::with_capacity(ticks.len());
        let mut cum_reward_curve = Vec::with_capacity(ticks.len());
        let mut attr_freq_curve = Vec::with_capacity(ticks.len());
        for (i, &t) in ticks.iter().enumerate() {
            win_rate_curve.push(band(t, group.iter().filter_map(|g| g[i].win_rate_window).collect()));
            cum_reward_curve.push(band(t, group.iter().map(|g| g[i].cum_reward).collect()));
            let mut med = [0.0; NUM_ATTRS];
            for (a, m) in med.iter_mut().enumerate() {
                let xs: Vec<f64> = group.iter().map(|g| g[i].attr_freq[a]).collect();
                *m = pcgeval_stats::median(&xs).unwrap_or(f64::NAN);
            }
            attr_freq_curve.push((t, med));
        }
        out.push(VersionSummary {
            version,
            runs: group.len(),
            total_games: last.iter().map(|r| r.games_total).sum(),
            total_wins: last.iter().map(|r| r.wins_total).sum(),
            avg_reward_per_game: MeanStd::of(&per_game),
            avg_win_rate: MeanStd::of(&win_rates),
            win_rate_curve,
            cum_reward_curve,
            attr_freq_curve,
        });
    }
    Ok(out)
}
