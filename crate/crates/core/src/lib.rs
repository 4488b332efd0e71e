//! Automated evaluation of procedurally generated opponents with
//! reinforcement-learning game-testing agents.
//!
//! The crate is organised the way data flows through an experiment:
//!
//! * [`duel`] is the card-duel state machine.
//! * [`pcg`] generates NPC profiles (random, or a genetic algorithm whose
//!   gene weights follow the player's performance).
//! * [`interact`] exposes the game to agents: a thin game-interaction layer
//!   and an episodic environment that computes rewards and drives the PCG.
//! * [`ppo`] is a from-scratch PPO agent.
//! * [`harness`] trains agents, writes checkpoints and the metrics log.
//! * [`evaltests`] scores trained instances (comprehensive and scenario tests).

pub mod checkpoint;
pub mod duel;
pub mod evaltests;
pub mod harness;
pub mod interact;
pub mod pcg;
pub mod ppo;
mod rngstate;

pub use rngstate::{seeded_rng, RngState};

/// Random generator used everywhere randomness is consumed.
pub type Rng = rand_chacha::ChaCha8Rng;
