//! Proximal policy optimization, written against plain `f64` slices.
//!
//! Policy and value functions are separate tanh MLPs whose weights live in
//! one flat parameter vector (policy first, then value) so that the
//! optimizer, the checkpoint format and the gradient checks all see the same
//! layout.

mod buffer;
mod net;
mod train;

pub use buffer::{compute_gae, RolloutBuffer};
pub use net::{NetworkArch, PolicyParams};
pub use train::{
    act, act_greedy, action_probs, collect_rollout, minibatch_loss, rollout_step, update, value_of, ActOutput, Learner, LossParts,
    UpdateStats,
};

use serde::{Deserialize, Serialize};

use crate::interact::EnvError;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PpoError {
    #[error("numerical fault: {0}")]
    NumericalFault(String),
    #[error("invalid hyperparameters: {0}")]
    Config(String),
    #[error("observation has {got} components, network expects {expected}")]
    InputDim { got: usize, expected: usize },
    #[error(transparent)]
    Env(#[from] EnvError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PpoHyperparams {
    pub n_steps: usize,
    pub batch_size: usize,
    pub n_epochs: usize,
    pub learning_rate: f64,
    pub gamma: f64,
    pub gae_lambda: f64,
    pub clip_range: f64,
    pub vf_coef: f64,
    pub entropy_coef: f64,
    pub max_grad_norm: f64,
    pub adam_eps: f64,
}

impl Default for PpoHyperparams {
    fn default() -> Self {
        Self {
            n_steps: 128,
            batch_size: 4,
            n_epochs: 10,
            learning_rate: 3e-4,
            gamma: 0.99,
            gae_lambda: 0.95,
            clip_range: 0.2,
            vf_coef: 0.5,
            entropy_coef: 0.0,
            max_grad_norm: 0.5,
            adam_eps: 1e-5,
        }
    }
}

impl PpoHyperparams {
    pub fn validate(&self) -> Result<(), PpoError> {
        let err = |m: String| Err(PpoError::Config(m));
        if self.n_steps == 0 || self.batch_size == 0 || self.n_steps % self.batch_size != 0 {
            return err(format!("n_steps {} must be a positive multiple of batch_size {}", self.n_steps, self.batch_size));
        }
        if self.n_epochs == 0 {
            return err("n_epochs must be positive".into());
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return err(format!("gamma {} outside (0, 1]", self.gamma));
        }
        if !(0.0..=1.0).contains(&self.gae_lambda) {
            return err(format!("gae_lambda {} outside [0, 1]", self.gae_lambda));
        }
        if !(self.clip_range > 0.0) {
            return err(format!("clip_range must be positive, got {}", self.clip_range));
        }
        let finite = [self.learning_rate, self.vf_coef, self.entropy_coef, self.max_grad_norm, self.adam_eps];
        if finite.iter().any(|v| !v.is_finite() || *v < 0.0) || self.learning_rate == 0.0 || self.adam_eps == 0.0 {
            return err("learning_rate, vf_coef, entropy_coef, max_grad_norm and adam_eps must be finite and non-negative (learning_rate, adam_eps positive)".into());
        }
        Ok(())
    }

    pub fn grad_steps_per_rollout(&self) -> usize {
        self.n_epochs * self.n_steps / self.batch_size
    }
}
