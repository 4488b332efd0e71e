//! Run configuration: built-in defaults, then `PCGEVAL_OUT`, then a TOML
//! file, then command-line flags.

use std::path::{Path, PathBuf};

use pcgeval::duel::DuelConfig;
use pcgeval::evaltests::{DEFAULT_REPEATS, DEFAULT_SCENARIO_DUELS};
use pcgeval::harness::TrainingPlan;
use pcgeval::interact::RewardConfig;
use pcgeval::pcg::{GaParams, PcgVersion};
use pcgeval::ppo::{NetworkArch, PpoHyperparams};
use serde::{Deserialize, Serialize};

use crate::CliError;

pub const OUT_ENV: &str = "PCGEVAL_OUT";
pub const DEFAULT_OUT: &str = "runs";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Output root for every command.
    pub out: PathBuf,
    pub duel: DuelConfig,
    pub ga: GaParams,
    pub reward: RewardConfig,
    pub ppo: PpoHyperparams,
    pub arch: NetworkArch,
    pub train: TrainSection,
    pub tests: TestSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    /// Number of seeds; runs use seeds `0..seeds`.
    pub seeds: u64,
    pub versions: Vec<PcgVersion>,
    pub sgas: u64,
    pub checkpoint_every: u64,
    pub metrics_every: u64,
    pub attr_window: usize,
    pub parallel: bool,
    pub resume: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TestSection {
    pub repeats: u32,
    pub eval_seed: u64,
    pub scenario_duels: u32,
    pub scenario_sources: Vec<PcgVersion>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            out: PathBuf::from(DEFAULT_OUT),
            duel: DuelConfig::default(),
            ga: GaParams::default(),
            reward: RewardConfig::default(),
            ppo: PpoHyperparams::default(),
            arch: NetworkArch::default(),
            train: TrainSection::default(),
            tests: TestSection::default(),
        }
    }
}

impl Default for TrainSection {
    fn default() -> Self {
        let plan = TrainingPlan::default();
        Self {
            seeds: plan.seeds.len() as u64,
            versions: plan.versions,
            sgas: plan.total_sgas,
            checkpoint_every: plan.checkpoint_every,
            metrics_every: plan.metrics_every,
            attr_window: plan.attr_window,
            parallel: false,
            resume: false,
        }
    }
}

impl Default for TestSection {
    fn default() -> Self {
        Self {
            repeats: DEFAULT_REPEATS,
            eval_seed: 0,
            scenario_duels: DEFAULT_SCENARIO_DUELS,
            scenario_sources: vec![PcgVersion::V1Random, PcgVersion::V2Raw],
        }
    }
}

impl RunConfig {
    /// Defaults, with the output root taken from `env_out` when set, then
    /// overlaid by the file at `path`.
    pub fn resolve(path: Option<&Path>, env_out: Option<PathBuf>) -> Result<Self, CliError> {
        let mut base = Self::default();
        if let Some(out) = env_out.filter(|p| !p.as_os_str().is_empty()) {
            base.out = out;
        }
        let Some(path) = path else { return Ok(base) };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config { path: path.to_path_buf(), message: e.to_string() })?;
        Self::parse_over(base, &text).map_err(|message| CliError::Config { path: path.to_path_buf(), message })
    }

    /// Parses `text` with `base` supplying every missing key.
    pub fn parse_over(base: Self, text: &str) -> Result<Self, String> {
        let overlay: toml::Table = text.parse().map_err(|e: toml::de::Error| e.to_string())?;
        let mut merged = toml::Table::try_from(&base).map_err(|e| e.to_string())?;
        merge(&mut merged, overlay);
        toml::Value::Table(merged).try_into().map_err(|e: toml::de::Error| e.to_string())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration always serializes")
    }

    pub fn training_plan(&self) -> TrainingPlan {
        TrainingPlan {
            seeds: (0..self.train.seeds).collect(),
            versions: self.train.versions.clone(),
            total_sgas: self.train.sgas,
            checkpoint_every: self.train.checkpoint_every,
            metrics_every: self.train.metrics_every,
            attr_window: self.train.attr_window,
            out_dir: self.out.clone(),
            resume: self.train.resume,
            duel: self.duel,
            ga: self.ga,
            reward: self.reward,
            ppo: self.ppo,
            arch: self.arch.clone(),
        }
    }
}

/// Recursive table overlay. Keys absent from `base` are kept so that
/// deserialization can reject them.
fn merge(base: &mut toml::Table, overlay: toml::Table) {
    for (k, v) in overlay {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}
