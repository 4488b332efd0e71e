//! Card duel between a player and a procedurally generated NPC.
//!
//! The NPC argues with a queue of argument cards built from its three
//! attributes; only the front argument can be contradicted, and only by a
//! player card of the same attribute. The player wins by emptying the queue
//! and loses when the turn budget runs out or their cards run out first.

use std::collections::VecDeque;
use std::fmt;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::seeded_rng;

pub const NUM_ATTRS: usize = 7;
pub const NUM_ACTIONS: usize = NUM_ATTRS + 1;
pub const PASS_INDEX: usize = NUM_ATTRS;
pub const PROFILE_LEN: usize = 3;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum DuelError {
    #[error("invalid duel configuration: {0}")]
    Config(String),
    #[error("invalid NPC profile: {0}")]
    Profile(String),
    #[error("action applied to a finished duel")]
    Finished,
    #[error("duel is still in progress")]
    InProgress,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct AttributeId(u8);

impl AttributeId {
    pub fn new(index: usize) -> Option<Self> {
        (index < NUM_ATTRS).then_some(Self(index as u8))
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }

    pub fn all() -> impl Iterator<Item = AttributeId> {
        (0..NUM_ATTRS as u8).map(AttributeId)
    }
}

impl fmt::Display for AttributeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Ordered triple of distinct attributes; the order fixes the argument queue.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NpcProfile([AttributeId; PROFILE_LEN]);

impl NpcProfile {
    pub fn new(attrs: [usize; PROFILE_LEN]) -> Result<Self, DuelError> {
        let mut ids = [AttributeId(0); PROFILE_LEN];
        for (slot, &a) in ids.iter_mut().zip(&attrs) {
            *slot = AttributeId::new(a).ok_or_else(|| DuelError::Profile(format!("attribute {a} out of range")))?;
        }
        if ids[0] == ids[1] || ids[0] == ids[2] || ids[1] == ids[2] {
            return Err(DuelError::Profile(format!("attributes {attrs:?} are not distinct")));
        }
        Ok(Self(ids))
    }

    pub fn attributes(&self) -> [AttributeId; PROFILE_LEN] {
        self.0
    }

    pub fn contains(&self, a: AttributeId) -> bool {
        self.0.contains(&a)
    }

    /// Attribute set as a 7-bit mask, independent of order.
    pub fn mask(&self) -> u8 {
        self.0.iter().fold(0, |m, a| m | (1 << a.0))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DuelConfig {
    pub args_per_attribute: u32,
    pub copies_per_attribute_in_deck: u32,
    pub initial_hand_size: u32,
    pub turn_limit: u32,
}

impl Default for DuelConfig {
    fn default() -> Self {
        Self { args_per_attribute: 2, copies_per_attribute_in_deck: 2, initial_hand_size: 4, turn_limit: 20 }
    }
}

impl DuelConfig {
    pub fn deck_size(&self) -> u32 {
        NUM_ATTRS as u32 * self.copies_per_attribute_in_deck
    }

    pub fn queue_len(&self) -> u32 {
        PROFILE_LEN as u32 * self.args_per_attribute
    }

    pub fn validate(&self) -> Result<(), DuelError> {
        let fields = [
            ("args_per_attribute", self.args_per_attribute),
            ("copies_per_attribute_in_deck", self.copies_per_attribute_in_deck),
            ("initial_hand_size", self.initial_hand_size),
            ("turn_limit", self.turn_limit),
        ];
        if let Some((name, _)) = fields.iter().find(|(_, v)| *v == 0) {
            return Err(DuelError::Config(format!("{name} must be at least 1")));
        }
        if self.initial_hand_size > self.deck_size() {
            return Err(DuelError::Config(format!(
                "initial_hand_size {} exceeds deck size {}",
                self.initial_hand_size,
                self.deck_size()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DuelAction {
    Play(AttributeId),
    Pass,
}

impl DuelAction {
    pub fn from_index(index: usize) -> Option<Self> {
        match index {
            PASS_INDEX => Some(Self::Pass),
            i => AttributeId::new(i).map(Self::Play),
        }
    }

    pub fn index(self) -> usize {
        match self {
            Self::Play(a) => a.index(),
            Self::Pass => PASS_INDEX,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Outcome {
    Win,
    Loss,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Classification {
    Correct,
    Incorrect,
    Noop,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StepOutcome {
    pub impactful: bool,
    pub terminal: Option<Outcome>,
    pub classification: Classification,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Tallies {
    pub played_correctly: [u32; NUM_ATTRS],
    pub played_incorrectly: [u32; NUM_ATTRS],
    pub args_destroyed: [u32; NUM_ATTRS],
}

/// End-of-duel summary consumed by the genetic algorithm's weight rules.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DuelReport {
    pub outcome: Outcome,
    pub npc_args_not_destroyed: [u32; NUM_ATTRS],
    pub played_correctly: [u32; NUM_ATTRS],
    pub played_incorrectly: [u32; NUM_ATTRS],
    pub unplayed: [u32; NUM_ATTRS],
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DuelState {
    pub(crate) profile: NpcProfile,
    pub(crate) config: DuelConfig,
    pub(crate) seed: u64,
    pub(crate) queue: VecDeque<AttributeId>,
    pub(crate) hand: [u32; NUM_ATTRS],
    /// Draw pile, front is drawn next.
    pub(crate) deck: VecDeque<AttributeId>,
    pub(crate) discarded: u32,
    pub(crate) turns_used: u32,
    pub(crate) tallies: Tallies,
    pub(crate) outcome: Option<Outcome>,
}

impl DuelState {
    /// Starts a duel: the queue is the profile order repeated
    /// `args_per_attribute` times, the deck is shuffled from `seed`.
    pub fn new(profile: NpcProfile, config: DuelConfig, seed: u64) -> Result<Self, DuelError> {
        config.validate()?;
        let queue: VecDeque<AttributeId> =
            (0..config.args_per_attribute).flat_map(|_| profile.attributes()).collect();
        let mut cards: Vec<AttributeId> = AttributeId::all()
            .flat_map(|a| std::iter::repeat_n(a, config.copies_per_attribute_in_deck as usize))
            .collect();
        cards.shuffle(&mut seeded_rng(seed, 0));
        let mut deck: VecDeque<AttributeId> = cards.into();
        let mut hand = [0; NUM_ATTRS];
        for _ in 0..config.initial_hand_size {
            let card = deck.pop_front().expect("hand size validated against deck size");
            hand[card.index()] += 1;
        }
        Ok(Self {
            profile,
            config,
            seed,
            queue,
            hand,
            deck,
            discarded: 0,
            turns_used: 0,
            tallies: Tallies::default(),
            outcome: None,
        })
    }

    pub fn profile(&self) -> NpcProfile {
        self.profile
    }

    pub fn config(&self) -> &DuelConfig {
        &self.config
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn queue(&self) -> &VecDeque<AttributeId> {
        &self.queue
    }

    pub fn front(&self) -> Option<AttributeId> {
        self.queue.front().copied()
    }

    pub fn hand(&self) -> &[u32; NUM_ATTRS] {
        &self.hand
    }

    pub fn hand_size(&self) -> u32 {
        self.hand.iter().sum()
    }

    pub fn deck_remaining(&self) -> usize {
        self.deck.len()
    }

    pub fn discarded(&self) -> u32 {
        self.discarded
    }

    pub fn turns_used(&self) -> u32 {
        self.turns_used
    }

    pub fn tallies(&self) -> &Tallies {
        &self.tallies
    }

    pub fn outcome(&self) -> Option<Outcome> {
        self.outcome
    }

    pub fn is_terminal(&self) -> bool {
        self.outcome.is_some()
    }

    /// Pass plus one play per attribute held; empty once the duel is over.
    pub fn legal_actions(&self) -> Vec<DuelAction> {
        if self.is_terminal() {
            return Vec::new();
        }
        AttributeId::all()
            .filter(|a| self.hand[a.index()] > 0)
            .map(DuelAction::Play)
            .chain(std::iter::once(DuelAction::Pass))
            .collect()
    }

    /// Plays one turn. Playing an attribute that is not in hand is a pass.
    pub fn apply(&mut self, action: DuelAction) -> Result<StepOutcome, DuelError> {
        if self.is_terminal() {
            return Err(DuelError::Finished);
        }
        let classification = match action {
            DuelAction::Play(a) if self.hand[a.index()] > 0 => {
                self.hand[a.index()] -= 1;
                self.discarded += 1;
                if self.queue.front() == Some(&a) {
                    self.queue.pop_front();
                    self.tallies.played_correctly[a.index()] += 1;
                    self.tallies.args_destroyed[a.index()] += 1;
                    Classification::Correct
                } else {
                    self.tallies.played_incorrectly[a.index()] += 1;
                    Classification::Incorrect
                }
            }
            _ => Classification::Noop,
        };
        self.turns_used += 1;
        if let Some(card) = self.deck.pop_front() {
            self.hand[card.index()] += 1;
        }
        let terminal = if self.queue.is_empty() {
            Some(Outcome::Win)
        } else if self.turns_used >= self.config.turn_limit || (self.hand_size() == 0 && self.deck.is_empty()) {
            Some(Outcome::Loss)
        } else {
            None
        };
        self.outcome = terminal;
        Ok(StepOutcome {
            impactful: classification == Classification::Correct || terminal == Some(Outcome::Win),
            terminal,
            classification,
        })
    }

    pub fn report(&self) -> Result<DuelReport, DuelError> {
        let outcome = self.outcome.ok_or(DuelError::InProgress)?;
        let mut not_destroyed = [0; NUM_ATTRS];
        for a in &self.queue {
            not_destroyed[a.index()] += 1;
        }
        let mut unplayed = self.hand;
        for a in &self.deck {
            unplayed[a.index()] += 1;
        }
        Ok(DuelReport {
            outcome,
            npc_args_not_destroyed: not_destroyed,
            played_correctly: self.tallies.played_correctly,
            played_incorrectly: self.tallies.played_incorrectly,
            unplayed,
        })
    }
}
