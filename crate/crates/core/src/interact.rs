//! Agent-facing access to the duel.
//!
//! [`Gii`] turns the duel into numbers: a fixed-size observation vector and
//! an integer action space where every index maps to a legal move.
//! [`DuelEnv`] wraps it as an episodic environment: it scores each step,
//! gates the step/reset protocol and hands finished duels to the NPC
//! generator before spawning the next opponent.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::duel::{
    Classification, DuelAction, DuelConfig, DuelError, DuelReport, DuelState, NpcProfile, Outcome, StepOutcome,
    NUM_ACTIONS, NUM_ATTRS,
};
use crate::pcg::{GaParams, PcgError, PcgState, PcgVersion};
use crate::{seeded_rng, Rng};

pub const OBS_DIM: usize = 3 * NUM_ATTRS + 2;

/// Offsets of the observation blocks.
pub mod layout {
    use super::NUM_ATTRS;
    pub const FRONT: usize = 0;
    pub const QUEUE: usize = NUM_ATTRS;
    pub const HAND: usize = 2 * NUM_ATTRS;
    pub const DECK: usize = 3 * NUM_ATTRS;
    pub const TURNS: usize = 3 * NUM_ATTRS + 1;
}

/// Stream id of the environment generator; the agent uses stream 0.
const ENV_STREAM: u64 = 1;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EnvError {
    #[error("environment has no game loaded")]
    NotInitialized,
    #[error("action index {0} out of range 0..{NUM_ACTIONS}")]
    ActionOutOfRange(usize),
    #[error("step called on a finished duel; reset first")]
    StepAfterTermination,
    #[error("reset called while a duel is in progress")]
    ResetMidDuel,
    #[error("observation has {got} components, expected {expected}")]
    ObservationDim { got: usize, expected: usize },
    #[error(transparent)]
    Duel(#[from] DuelError),
    #[error(transparent)]
    Pcg(#[from] PcgError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SpaceDescriptor {
    pub action_dim: usize,
    pub observation_dim: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardConfig {
    pub impactful_reward: f64,
    pub win_reward: f64,
    pub step_penalty: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self { impactful_reward: 100.0, win_reward: 100.0, step_penalty: -2.0 }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<(), String> {
        if [self.impactful_reward, self.win_reward, self.step_penalty].iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err("reward values must be finite".into())
        }
    }

    pub fn score(&self, outcome: &StepOutcome) -> f64 {
        if outcome.impactful {
            let mut r = 0.0;
            if outcome.classification == Classification::Correct {
                r += self.impactful_reward;
            }
            if outcome.terminal == Some(Outcome::Win) {
                r += self.win_reward;
            }
            r
        } else {
            self.step_penalty
        }
    }
}

/// Encodes a duel as 23 numbers in `[0, 1]`: front-argument one-hot,
/// remaining arguments per attribute, hand counts per attribute, deck
/// fraction and turn budget fraction.
pub fn encode_observation(state: &DuelState) -> Vec<f64> {
    let cfg = state.config();
    let mut obs = vec![0.0; OBS_DIM];
    if !state.is_terminal() {
        if let Some(front) = state.front() {
            obs[layout::FRONT + front.index()] = 1.0;
        }
    }
    let args = f64::from(cfg.args_per_attribute);
    for a in state.queue() {
        obs[layout::QUEUE + a.index()] += 1.0 / args;
    }
    let copies = f64::from(cfg.copies_per_attribute_in_deck);
    for (i, &n) in state.hand().iter().enumerate() {
        obs[layout::HAND + i] = (f64::from(n) / copies).min(1.0);
    }
    obs[layout::DECK] = state.deck_remaining() as f64 / f64::from(cfg.deck_size());
    obs[layout::TURNS] = f64::from(cfg.turn_limit - state.turns_used()) / f64::from(cfg.turn_limit);
    obs
}

/// Game interaction layer over a single duel.
#[derive(Debug, Clone, PartialEq)]
pub struct Gii {
    duel: Option<DuelState>,
}

impl Gii {
    pub fn new() -> Self {
        Self { duel: None }
    }

    pub fn with_duel(duel: DuelState) -> Self {
        Self { duel: Some(duel) }
    }

    pub fn load(&mut self, duel: DuelState) {
        self.duel = Some(duel);
    }

    pub fn duel(&self) -> Option<&DuelState> {
        self.duel.as_ref()
    }

    pub fn get_representations(&self) -> Result<SpaceDescriptor, EnvError> {
        self.duel.as_ref().ok_or(EnvError::NotInitialized)?;
        Ok(SpaceDescriptor { action_dim: NUM_ACTIONS, observation_dim: OBS_DIM })
    }

    pub fn get_state(&self) -> Result<Vec<f64>, EnvError> {
        self.duel.as_ref().map(encode_observation).ok_or(EnvError::NotInitialized)
    }

    /// Applies action `index`; 7 is pass and unplayable cards become a pass.
    pub fn perform_action(&mut self, index: usize) -> Result<StepOutcome, EnvError> {
        let action = DuelAction::from_index(index).ok_or(EnvError::ActionOutOfRange(index))?;
        let duel = self.duel.as_mut().ok_or(EnvError::NotInitialized)?;
        let action = match action {
            DuelAction::Play(a) if duel.hand()[a.index()] == 0 => DuelAction::Pass,
            other => other,
        };
        Ok(duel.apply(action)?)
    }
}

impl Default for Gii {
    fn default() -> Self {
        Self::new()
    }
}

/// One environment transition.
#[derive(Debug, Clone, PartialEq)]
pub struct Step<I> {
    pub observation: Vec<f64>,
    pub reward: f64,
    pub terminated: bool,
    pub info: I,
}

/// Episodic environment contract used by the agent.
pub trait Environment {
    type Info;

    fn spaces(&self) -> SpaceDescriptor;

    /// Observation of the state the next action applies to.
    fn observe(&self) -> Result<Vec<f64>, EnvError>;

    fn step(&mut self, action: usize) -> Result<Step<Self::Info>, EnvError>;

    fn reset(&mut self) -> Result<Vec<f64>, EnvError>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepInfo {
    pub impactful: bool,
    pub classification: Classification,
    pub outcome: Option<Outcome>,
    pub profile: NpcProfile,
    /// SGA count after this step.
    pub sga: u64,
    pub report: Option<DuelReport>,
}

pub type StepResult = Step<StepInfo>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    /// Fresh duel, nothing played yet.
    Ready,
    Running,
    Terminated,
}

/// Episodic duel environment with live NPC generation.
#[derive(Debug, Clone)]
pub struct DuelEnv {
    pub(crate) gii: Gii,
    pub(crate) duel_config: DuelConfig,
    pub(crate) reward: RewardConfig,
    pub(crate) pcg: PcgState,
    pub(crate) rng: Rng,
    pub(crate) sga_count: u64,
    pub(crate) phase: Phase,
    pub(crate) spawned: u64,
    pub(crate) last_report: Option<DuelReport>,
}

impl DuelEnv {
    pub fn new(
        version: PcgVersion,
        ga: GaParams,
        duel_config: DuelConfig,
        reward: RewardConfig,
        seed: u64,
    ) -> Result<Self, EnvError> {
        duel_config.validate()?;
        reward.validate().map_err(|e| EnvError::Duel(DuelError::Config(e)))?;
        let mut rng = seeded_rng(seed, ENV_STREAM);
        let pcg = PcgState::new(version, ga, &mut rng)?;
        let mut env = Self {
            gii: Gii::new(),
            duel_config,
            reward,
            pcg,
            rng,
            sga_count: 0,
            phase: Phase::Ready,
            spawned: 0,
            last_report: None,
        };
        env.spawn()?;
        Ok(env)
    }

    fn spawn(&mut self) -> Result<(), EnvError> {
        let profile = self.pcg.sample_opponent(&mut self.rng)?;
        let duel_seed = self.rng.random::<u64>();
        self.gii.load(DuelState::new(profile, self.duel_config, duel_seed)?);
        self.spawned += 1;
        self.phase = Phase::Ready;
        Ok(())
    }

    pub fn sga_count(&self) -> u64 {
        self.sga_count
    }

    /// Number of opponents generated so far, including the current one.
    pub fn spawned(&self) -> u64 {
        self.spawned
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn pcg(&self) -> &PcgState {
        &self.pcg
    }

    pub fn gii(&self) -> &Gii {
        &self.gii
    }

    pub fn duel_config(&self) -> &DuelConfig {
        &self.duel_config
    }

    pub fn reward_config(&self) -> &RewardConfig {
        &self.reward
    }

    pub fn current_profile(&self) -> NpcProfile {
        self.gii.duel().expect("a duel is always loaded").profile()
    }

    pub fn last_report(&self) -> Option<&DuelReport> {
        self.last_report.as_ref()
    }
}

impl Environment for DuelEnv {
    type Info = StepInfo;

    fn spaces(&self) -> SpaceDescriptor {
        self.gii.get_representations().expect("a duel is always loaded")
    }

    fn observe(&self) -> Result<Vec<f64>, EnvError> {
        self.gii.get_state()
    }

    fn step(&mut self, action: usize) -> Result<StepResult, EnvError> {
        if self.phase == Phase::Terminated {
            return Err(EnvError::StepAfterTermination);
        }
        if action >= NUM_ACTIONS {
            return Err(EnvError::ActionOutOfRange(action));
        }
        let outcome = self.gii.perform_action(action)?;
        self.sga_count += 1;
        let reward = self.reward.score(&outcome);
        let duel = self.gii.duel().expect("loaded");
        let report = if outcome.terminal.is_some() {
            self.phase = Phase::Terminated;
            let r = duel.report()?;
            self.last_report = Some(r);
            Some(r)
        } else {
            self.phase = Phase::Running;
            None
        };
        Ok(Step {
            observation: encode_observation(duel),
            reward,
            terminated: outcome.terminal.is_some(),
            info: StepInfo {
                impactful: outcome.impactful,
                classification: outcome.classification,
                outcome: outcome.terminal,
                profile: duel.profile(),
                sga: self.sga_count,
                report,
            },
        })
    }

    fn reset(&mut self) -> Result<Vec<f64>, EnvError> {
        match self.phase {
            Phase::Ready => {}
            Phase::Running => return Err(EnvError::ResetMidDuel),
            Phase::Terminated => {
                let report = self.last_report.expect("terminated duel has a report");
                self.pcg.on_duel_end(&report, &mut self.rng);
                self.spawn()?;
            }
        }
        self.gii.get_state()
    }
}
