//! Evaluation protocols for trained instances: the comprehensive test over
//! every attribute combination, the scenario test against live generators,
//! best-instance selection and IQR outlier filtering.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{load_checkpoint, CheckpointError};
use crate::duel::{AttributeId, DuelConfig, DuelState, NpcProfile, Outcome, NUM_ACTIONS, NUM_ATTRS, PASS_INDEX, PROFILE_LEN};
use crate::harness::run_id;
use crate::interact::{encode_observation, layout, DuelEnv, EnvError, Environment, Gii, RewardConfig};
use crate::pcg::{all_combos, GaParams, PcgVersion};
use crate::ppo::{act_greedy, PolicyParams, PpoError};
use crate::{seeded_rng, Rng};

pub const DEFAULT_REPEATS: u32 = 5;
pub const DEFAULT_SCENARIO_DUELS: u32 = 1000;
pub const RESULTS_HEADER: &str = "instance_id,seed,version,checkpoint_sga,opponent_source,duels,wins,win_rate,retained";
/// Opponent-source label of comprehensive-test rows.
pub const COMBOS_SOURCE: &str = "combos";
const NUM_PERMUTATIONS: u32 = 6;

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Agent(#[from] PpoError),
    #[error("no scores to select from")]
    NoScores,
    #[error("group {0} has {1} results, the IQR filter needs at least 4")]
    GroupTooSmall(String, usize),
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("results file: {0}")]
    Results(String),
}

/// Anything that maps an observation to an action index.
pub trait Policy {
    fn action(&mut self, obs: &[f64]) -> Result<usize, EvalError>;
}

/// Argmax of a trained policy network.
pub struct GreedyPolicy<'a>(pub &'a PolicyParams);

impl Policy for GreedyPolicy<'_> {
    fn action(&mut self, obs: &[f64]) -> Result<usize, EvalError> {
        Ok(act_greedy(self.0, obs)?)
    }
}

/// Plays the front argument's attribute when a matching card is held.
pub struct MatchingOracle;

impl Policy for MatchingOracle {
    fn action(&mut self, obs: &[f64]) -> Result<usize, EvalError> {
        let front = obs[layout::FRONT..layout::FRONT + NUM_ATTRS].iter().position(|&x| x > 0.5);
        Ok(match front {
            Some(a) if obs[layout::HAND + a] > 0.0 => a,
            _ => PASS_INDEX,
        })
    }
}

pub struct UniformRandom(pub Rng);

impl Policy for UniformRandom {
    fn action(&mut self, _obs: &[f64]) -> Result<usize, EvalError> {
        Ok(self.0.random_range(0..NUM_ACTIONS))
    }
}

/// The 35 attribute sets in lexicographic order.
pub fn enumerate_combos() -> Vec<[AttributeId; PROFILE_LEN]> {
    all_combos()
}

/// Plays one duel to the end and reports whether the agent won.
pub fn play_duel(policy: &mut dyn Policy, duel: DuelState) -> Result<bool, EvalError> {
    let mut gii = Gii::with_duel(duel);
    loop {
        let d = gii.duel().expect("loaded");
        if let Some(o) = d.outcome() {
            return Ok(o == Outcome::Win);
        }
        let a = policy.action(&encode_observation(d))?;
        gii.perform_action(a)?;
    }
}

/// Duels played and won.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Tally {
    pub duels: u64,
    pub wins: u64,
}

impl Tally {
    pub fn win_rate(&self) -> f64 {
        if self.duels == 0 {
            0.0
        } else {
            self.wins as f64 / self.duels as f64
        }
    }
}

/// Every combination `repeats` times, each duel against a uniformly random
/// ordering of the combination. The generator plays no part.
pub fn comprehensive_test(
    policy: &mut dyn Policy,
    config: DuelConfig,
    repeats: u32,
    seed: u64,
) -> Result<Tally, EvalError> {
    config.validate().map_err(EnvError::from)?;
    let mut rng = seeded_rng(seed, 0);
    let mut tally = Tally::default();
    for combo in enumerate_combos() {
        for _ in 0..repeats {
            let mut attrs = combo.map(AttributeId::index);
            attrs.shuffle(&mut rng);
            let profile = NpcProfile::new(attrs).expect("combination attributes are distinct");
            let duel = DuelState::new(profile, config, rng.random()).map_err(EnvError::from)?;
            tally.duels += 1;
            tally.wins += play_duel(policy, duel)? as u64;
        }
    }
    Ok(tally)
}

/// Plays `duels` consecutive duels in `env`, resetting between them so the
/// generator sees every report. `env` must not be mid-duel.
pub fn play_duels(policy: &mut dyn Policy, env: &mut DuelEnv, duels: u32) -> Result<Tally, EvalError> {
    let mut tally = Tally::default();
    env.reset()?;
    while tally.duels < duels as u64 {
        let step = env.step(policy.action(&env.observe()?)?)?;
        if let Some(o) = step.info.outcome {
            tally.duels += 1;
            tally.wins += (o == Outcome::Win) as u64;
            if tally.duels < duels as u64 {
                env.reset()?;
            }
        }
    }
    Ok(tally)
}

/// Plays exactly `sgas` actions, counting the duels that finish.
pub fn play_sgas(policy: &mut dyn Policy, env: &mut DuelEnv, sgas: u64) -> Result<Tally, EvalError> {
    let mut tally = Tally::default();
    env.reset()?;
    for _ in 0..sgas {
        let step = env.step(policy.action(&env.observe()?)?)?;
        if let Some(o) = step.info.outcome {
            tally.duels += 1;
            tally.wins += (o == Outcome::Win) as u64;
            env.reset()?;
        }
    }
    Ok(tally)
}

/// Exact number of length-`repeats` draw sequences over the 6 orderings that
/// contain at least `k` distinct orderings, and the total `6^repeats`.
pub fn permutation_coverage_counts(repeats: u32, k: u32) -> Result<(u128, u128), EvalError> {
    if repeats == 0 || repeats > 48 {
        return Err(EvalError::Argument(format!("repeats must lie in 1..=48, got {repeats}")));
    }
    if !(1..=NUM_PERMUTATIONS).contains(&k) {
        return Err(EvalError::Argument(format!("k must lie in 1..=6, got {k}")));
    }
    let m = NUM_PERMUTATIONS as usize;
    // ways[d]: sequences so far that show exactly d distinct orderings
    let mut ways = vec![0u128; m + 1];
    ways[0] = 1;
    for _ in 0..repeats {
        let mut next = vec![0u128; m + 1];
        for d in 0..=m {
            next[d] += ways[d] * d as u128;
            if d < m {
                next[d + 1] += ways[d] * (m - d) as u128;
            }
        }
        ways = next;
    }
    let total = (m as u128).pow(repeats);
    Ok((ways[k as usize..].iter().sum(), total))
}

pub fn permutation_coverage_probability(repeats: u32, k: u32) -> Result<f64, EvalError> {
    let (hits, total) = permutation_coverage_counts(repeats, k)?;
    Ok(hits as f64 / total as f64)
}

/// Comprehensive-test score of one checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceScore {
    pub seed: u64,
    pub version: PcgVersion,
    pub checkpoint_sga: u64,
    pub duels_played: u64,
    pub wins: u64,
    pub win_rate: f64,
}

impl InstanceScore {
    pub fn instance_id(&self) -> String {
        instance_id(self.seed, self.version, self.checkpoint_sga)
    }
}

pub fn instance_id(seed: u64, version: PcgVersion, sga: u64) -> String {
    format!("{}@{sga}", run_id(seed, version))
}

pub fn score_checkpoint(
    path: &Path,
    seed: u64,
    config: DuelConfig,
    repeats: u32,
    eval_seed: u64,
) -> Result<InstanceScore, EvalError> {
    let ckpt = load_checkpoint(path)?;
    let tally = comprehensive_test(&mut GreedyPolicy(&ckpt.params), config, repeats, eval_seed)?;
    Ok(InstanceScore {
        seed,
        version: ckpt.pcg.version,
        checkpoint_sga: ckpt.sga_count,
        duels_played: tally.duels,
        wins: tally.wins,
        win_rate: tally.win_rate(),
    })
}

/// Best checkpoint per (seed, version): highest win rate, then the later
/// checkpoint, then the earlier position in `scores`.
pub fn select_best_instances(scores: &[InstanceScore]) -> Result<Vec<InstanceScore>, EvalError> {
    if scores.is_empty() {
        return Err(EvalError::NoScores);
    }
    let mut best: BTreeMap<(PcgVersion, u64), usize> = BTreeMap::new();
    for (i, s) in scores.iter().enumerate() {
        let slot = best.entry((s.version, s.seed)).or_insert(i);
        let cur = &scores[*slot];
        let better = s.win_rate > cur.win_rate || (s.win_rate == cur.win_rate && s.checkpoint_sga > cur.checkpoint_sga);
        if better {
            *slot = i;
        }
    }
    Ok(best.into_values().map(|i| scores[i].clone()).collect())
}

/// A trained instance as used by the scenario test.
#[derive(Debug, Clone)]
pub struct Instance {
    pub seed: u64,
    pub version: PcgVersion,
    pub checkpoint_sga: u64,
    pub params: PolicyParams,
}

impl Instance {
    pub fn load(path: &Path, seed: u64) -> Result<Self, EvalError> {
        let ckpt = load_checkpoint(path)?;
        Ok(Self { seed, version: ckpt.pcg.version, checkpoint_sga: ckpt.sga_count, params: ckpt.params })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioResult {
    pub instance_id: String,
    pub seed: u64,
    pub version: PcgVersion,
    pub checkpoint_sga: u64,
    pub source: PcgVersion,
    pub duels: u64,
    pub wins: u64,
    pub win_rate: f64,
    pub retained: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScenarioSettings {
    pub duels: u32,
    pub seed: u64,
    pub duel: DuelConfig,
    pub ga: GaParams,
    pub reward: RewardConfig,
}

impl Default for ScenarioSettings {
    fn default() -> Self {
        Self {
            duels: DEFAULT_SCENARIO_DUELS,
            seed: 0,
            duel: DuelConfig::default(),
            ga: GaParams::default(),
            reward: RewardConfig::default(),
        }
    }
}

/// Each instance meets `duels` opponents from a fresh generator of the given
/// source, seeded identically for every instance.
pub fn scenario_test(
    instances: &[Instance],
    source: PcgVersion,
    settings: &ScenarioSettings,
) -> Result<Vec<ScenarioResult>, EvalError> {
    if settings.duels == 0 {
        return Err(EvalError::Argument("duels must be positive".into()));
    }
    instances
        .iter()
        .map(|inst| {
            let mut env = DuelEnv::new(source, settings.ga, settings.duel, settings.reward, settings.seed)?;
            let tally = play_duels(&mut GreedyPolicy(&inst.params), &mut env, settings.duels)?;
            Ok(ScenarioResult {
                instance_id: instance_id(inst.seed, inst.version, inst.checkpoint_sga),
                seed: inst.seed,
                version: inst.version,
                checkpoint_sga: inst.checkpoint_sga,
                source,
                duels: tally.duels,
                wins: tally.wins,
                win_rate: tally.win_rate(),
                retained: true,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct IqrOutcome {
    /// Every input result, with `retained` recomputed.
    pub results: Vec<ScenarioResult>,
    pub removed_seeds: Vec<u64>,
}

impl IqrOutcome {
    pub fn retained(&self) -> impl Iterator<Item = &ScenarioResult> {
        self.results.iter().filter(|r| r.retained)
    }
}

/// Tukey fences `[Q1 - 1.5 IQR, Q3 + 1.5 IQR]` with type-7 quartiles.
pub fn iqr_fences(values: &[f64]) -> Result<(f64, f64), EvalError> {
    let q1 = pcgeval_stats::quantile(values, 0.25).map_err(|e| EvalError::Argument(e.to_string()))?;
    let q3 = pcgeval_stats::quantile(values, 0.75).map_err(|e| EvalError::Argument(e.to_string()))?;
    let iqr = q3 - q1;
    Ok((q1 - 1.5 * iqr, q3 + 1.5 * iqr))
}

/// Flags outliers per (version, source) group, then drops every result that
/// shares a seed with an outlier. Fences use all results of a group whatever
/// their previous flag, so the filter is idempotent on its own output.
pub fn iqr_filter(results: &[ScenarioResult]) -> Result<IqrOutcome, EvalError> {
    let mut groups: BTreeMap<(PcgVersion, PcgVersion), Vec<usize>> = BTreeMap::new();
    for (i, r) in results.iter().enumerate() {
        groups.entry((r.version, r.source)).or_default().push(i);
    }
    let mut removed = BTreeSet::new();
    for ((version, source), idx) in &groups {
        if idx.len() < 4 {
            return Err(EvalError::GroupTooSmall(format!("{version} vs {source}"), idx.len()));
        }
        let values: Vec<f64> = idx.iter().map(|&i| results[i].win_rate).collect();
        let (lo, hi) = iqr_fences(&values)?;
        for &i in idx {
            let w = results[i].win_rate;
            if w < lo || w > hi {
                removed.insert(results[i].seed);
            }
        }
    }
    let results = results.iter().map(|r| ScenarioResult { retained: !removed.contains(&r.seed), ..r.clone() }).collect();
    Ok(IqrOutcome { results, removed_seeds: removed.into_iter().collect() })
}

/// One row of a results file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub instance_id: String,
    pub seed: u64,
    pub version: PcgVersion,
    pub checkpoint_sga: u64,
    pub opponent_source: String,
    pub duels: u64,
    pub wins: u64,
    pub win_rate: f64,
    pub retained: bool,
}

impl From<&ScenarioResult> for ResultRow {
    fn from(r: &ScenarioResult) -> Self {
        Self {
            instance_id: r.instance_id.clone(),
            seed: r.seed,
            version: r.version,
            checkpoint_sga: r.checkpoint_sga,
            opponent_source: r.source.to_string(),
            duels: r.duels,
            wins: r.wins,
            win_rate: r.win_rate,
            retained: r.retained,
        }
    }
}

impl From<&InstanceScore> for ResultRow {
    fn from(s: &InstanceScore) -> Self {
        Self {
            instance_id: s.instance_id(),
            seed: s.seed,
            version: s.version,
            checkpoint_sga: s.checkpoint_sga,
            opponent_source: COMBOS_SOURCE.into(),
            duels: s.duels_played,
            wins: s.wins,
            win_rate: s.win_rate,
            retained: true,
        }
    }
}

impl ResultRow {
    pub fn to_score(&self) -> InstanceScore {
        InstanceScore {
            seed: self.seed,
            version: self.version,
            checkpoint_sga: self.checkpoint_sga,
            duels_played: self.duels,
            wins: self.wins,
            win_rate: self.win_rate,
        }
    }
}

pub fn write_results(path: &Path, rows: &[ResultRow]) -> Result<(), EvalError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| EvalError::Results(e.to_string()))?;
    for r in rows {
        w.serialize(r).map_err(|e| EvalError::Results(e.to_string()))?;
    }
    if rows.is_empty() {
        w.write_record(RESULTS_HEADER.split(',')).map_err(|e| EvalError::Results(e.to_string()))?;
    }
    w.flush().map_err(|e| EvalError::Results(e.to_string()))
}

pub fn read_results(path: &Path) -> Result<Vec<ResultRow>, EvalError> {
    let bad = |e: csv::Error| EvalError::Results(format!("{}: {e}", path.display()));
    let mut r = csv::Reader::from_path(path).map_err(bad)?;
    let header = r.headers().map_err(bad)?.iter().collect::<Vec<_>>().join(",");
    if header != RESULTS_HEADER {
        return Err(EvalError::Results(format!("{}: unexpected header {header:?}", path.display())));
    }
    r.deserialize().map(|row| row.map_err(bad)).collect()
}
