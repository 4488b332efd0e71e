use rand::seq::SliceRandom;
use rand::Rng as _;

use super::buffer::{compute_gae, RolloutBuffer};
use super::net::{backward, forward, Activations, NetworkArch, PolicyParams};
use super::{PpoError, PpoHyperparams};
use crate::interact::{Environment, Step};
use crate::{seeded_rng, Rng};

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADV_STD_FLOOR: f64 = 1e-8;
/// Stream for action sampling and minibatch shuffling.
const AGENT_STREAM: u64 = 0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActOutput {
    pub action: usize,
    pub log_prob: f64,
    pub value: f64,
}

/// Numerically stable log-softmax.
fn log_softmax(logits: &[f64], out: &mut [f64]) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
    for (o, z) in out.iter_mut().zip(logits) {
        *o = z - lse;
    }
}

fn check_input(arch: &NetworkArch, obs: &[f64]) -> Result<(), PpoError> {
    if obs.len() != arch.input_dim {
        return Err(PpoError::InputDim { got: obs.len(), expected: arch.input_dim });
    }
    Ok(())
}

fn policy_logits(params: &PolicyParams, obs: &[f64]) -> Vec<f64> {
    let dims = params.arch.policy_dims();
    let mut cache = Activations::for_dims(&dims);
    forward(params.policy_theta(), &dims, obs, &mut cache);
    cache.output().to_vec()
}

pub fn value_of(params: &PolicyParams, obs: &[f64]) -> Result<f64, PpoError> {
    check_input(&params.arch, obs)?;
    let dims = params.arch.value_dims();
    let mut cache = Activations::for_dims(&dims);
    forward(params.value_theta(), &dims, obs, &mut cache);
    let v = cache.output()[0];
    if !v.is_finite() {
        return Err(PpoError::NumericalFault(format!("value estimate {v}")));
    }
    Ok(v)
}

/// Action probabilities of the policy at `obs`.
pub fn action_probs(params: &PolicyParams, obs: &[f64]) -> Result<Vec<f64>, PpoError> {
    check_input(&params.arch, obs)?;
    let logits = policy_logits(params, obs);
    let mut logp = vec![0.0; logits.len()];
    log_softmax(&logits, &mut logp);
    if logp.iter().any(|v| !v.is_finite()) {
        return Err(PpoError::NumericalFault("non-finite policy logits".into()));
    }
    Ok(logp.iter().map(|l| l.exp()).collect())
}

/// Samples an action from the softmax policy.
pub fn act(params: &PolicyParams, obs: &[f64], rng: &mut Rng) -> Result<ActOutput, PpoError> {
    check_input(&params.arch, obs)?;
    let logits = policy_logits(params, obs);
    let mut logp = vec![0.0; logits.len()];
    log_softmax(&logits, &mut logp);
    if logp.iter().any(|v| !v.is_finite()) {
        return Err(PpoError::NumericalFault("non-finite policy logits".into()));
    }
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut action = logp.len() - 1;
    for (i, l) in logp.iter().enumerate() {
        acc += l.exp();
        if u < acc {
            action = i;
            break;
        }
    }
    Ok(ActOutput { action, log_prob: logp[action], value: value_of(params, obs)? })
}

/// Most probable action; ties go to the lowest index.
pub fn act_greedy(params: &PolicyParams, obs: &[f64]) -> Result<usize, PpoError> {
    check_input(&params.arch, obs)?;
    let logits = policy_logits(params, obs);
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(PpoError::NumericalFault("non-finite policy logits".into()));
    }
    let mut best = 0;
    for (i, &z) in logits.iter().enumerate() {
        if z > logits[best] {
            best = i;
        }
    }
    Ok(best)
}

/// Acts once in `env`, records the transition and resets the environment
/// when the episode ends.
pub fn rollout_step<E: Environment>(
    params: &PolicyParams,
    env: &mut E,
    buffer: &mut RolloutBuffer,
    rng: &mut Rng,
) -> Result<Step<E::Info>, PpoError> {
    let obs = env.observe()?;
    let out = act(params, &obs, rng)?;
    let step = env.step(out.action)?;
    buffer.push(&obs, out.action, out.log_prob, out.value, step.reward, step.terminated);
    if step.terminated {
        env.reset()?;
    }
    Ok(step)
}

/// Collects exactly `n_steps` transitions and records the bootstrap value.
pub fn collect_rollout<E: Environment>(
    params: &PolicyParams,
    env: &mut E,
    n_steps: usize,
    rng: &mut Rng,
) -> Result<RolloutBuffer, PpoError> {
    let mut buffer = RolloutBuffer::new(params.arch.input_dim, n_steps);
    for _ in 0..n_steps {
        rollout_step(params, env, &mut buffer, rng)?;
    }
    buffer.last_value = value_of(params, &env.observe()?)?;
    Ok(buffer)
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossParts {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub total: f64,
    /// Fraction of samples whose ratio left the clip interval.
    pub clip_fraction: f64,
}

struct Workspace {
    policy: Activations,
    value: Activations,
    logp: Vec<f64>,
    d_logits: Vec<f64>,
    scratch: Vec<f64>,
}

impl Workspace {
    fn new(arch: &NetworkArch) -> Self {
        Self {
            policy: Activations::for_dims(&arch.policy_dims()),
            value: Activations::for_dims(&arch.value_dims()),
            logp: vec![0.0; arch.n_actions],
            d_logits: vec![0.0; arch.n_actions],
            scratch: Vec::new(),
        }
    }
}

/// PPO loss over the samples `idx` of `buffer`, using the given
/// (already normalized) advantages. When `grad` is given the gradient of
/// the total loss is accumulated into it.
///
/// total = -mean(min(r A, clip(r, 1-eps, 1+eps) A)) + vf_coef mean((V - R)^2) - ent_coef mean(H)
pub fn minibatch_loss(
    theta: &[f64],
    arch: &NetworkArch,
    hyper: &PpoHyperparams,
    buffer: &RolloutBuffer,
    idx: &[usize],
    advantages: &[f64],
    grad: Option<&mut [f64]>,
) -> LossParts {
    let mut ws = Workspace::new(arch);
    minibatch_loss_ws(theta, arch, hyper, buffer, idx, advantages, grad, &mut ws)
}

#[allow(clippy::too_many_arguments)]
fn minibatch_loss_ws(
    theta: &[f64],
    arch: &NetworkArch,
    hyper: &PpoHyperparams,
    buffer: &RolloutBuffer,
    idx: &[usize],
    advantages: &[f64],
    mut grad: Option<&mut [f64]>,
    ws: &mut Workspace,
) -> LossParts {
    let policy_dims = arch.policy_dims();
    let value_dims = arch.value_dims();
    let split = arch.policy_param_count();
    let (policy_theta, value_theta) = theta.split_at(split);
    let inv_b = 1.0 / idx.len() as f64;
    let eps = hyper.clip_range;
    let mut parts = LossParts::default();
    let mut clipped = 0usize;

    for (k, &i) in idx.iter().enumerate() {
        let obs = buffer.observation(i);
        let action = buffer.actions[i];
        let adv = advantages[k];

        forward(policy_theta, &policy_dims, obs, &mut ws.policy);
        log_softmax(ws.policy.output(), &mut ws.logp);
        let ratio = (ws.logp[action] - buffer.log_probs[i]).exp();
        let clipped_ratio = ratio.clamp(1.0 - eps, 1.0 + eps);
        let surr1 = ratio * adv;
        let surr2 = clipped_ratio * adv;
        parts.policy_loss -= surr1.min(surr2) * inv_b;
        if (ratio - 1.0).abs() > eps {
            clipped += 1;
        }
        let entropy: f64 = -ws.logp.iter().map(|l| l.exp() * l).sum::<f64>();
        parts.entropy += entropy * inv_b;

        forward(value_theta, &value_dims, obs, &mut ws.value);
        let v = ws.value.output()[0];
        let err = v - buffer.returns[i];
        parts.value_loss += err * err * inv_b;

        if let Some(g) = grad.as_deref_mut() {
            // d loss / d log pi(a): only the unclipped branch carries gradient
            let d_logp = if surr1 <= surr2 { -adv * ratio * inv_b } else { 0.0 };
            for (j, d) in ws.d_logits.iter_mut().enumerate() {
                let p = ws.logp[j].exp();
                let onehot = if j == action { 1.0 } else { 0.0 };
                // dH/dz_j = -p_j (log p_j + H)
                let d_entropy = -p * (ws.logp[j] + entropy);
                *d = d_logp * (onehot - p) - hyper.entropy_coef * inv_b * d_entropy;
            }
            let (gp, gv) = g.split_at_mut(split);
            backward(policy_theta, &policy_dims, &ws.policy, &ws.d_logits, gp, &mut ws.scratch);
            let d_v = [2.0 * hyper.vf_coef * err * inv_b];
            backward(value_theta, &value_dims, &ws.value, &d_v, gv, &mut ws.scratch);
        }
    }
    parts.clip_fraction = clipped as f64 * inv_b;
    parts.total = parts.policy_loss + hyper.vf_coef * parts.value_loss - hyper.entropy_coef * parts.entropy;
    parts
}

fn normalize(adv: &mut [f64]) {
    let n = adv.len() as f64;
    let mean = adv.iter().sum::<f64>() / n;
    let std = (adv.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n).sqrt();
    for a in adv.iter_mut() {
        *a = (*a - mean) / (std + ADV_STD_FLOOR);
    }
}

fn adam_step(params: &mut PolicyParams, grad: &[f64], lr: f64, eps: f64) {
    params.adam_step += 1;
    let t = params.adam_step as i32;
    let c1 = 1.0 - ADAM_BETA1.powi(t);
    let c2 = 1.0 - ADAM_BETA2.powi(t);
    for (((w, m), v), g) in params.theta.iter_mut().zip(&mut params.adam_m).zip(&mut params.adam_v).zip(grad) {
        *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
        *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
        *w -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct UpdateStats {
    pub grad_steps: usize,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
    /// Policy loss of the very first minibatch, where the ratio is 1.
    pub first_policy_loss: f64,
}

/// Runs `n_epochs` passes of shuffled minibatch updates over a rollout
/// whose advantages and returns are filled in.
pub fn update(
    params: &mut PolicyParams,
    buffer: &RolloutBuffer,
    hyper: &PpoHyperparams,
    rng: &mut Rng,
) -> Result<UpdateStats, PpoError> {
    assert_eq!(buffer.advantages.len(), buffer.len(), "compute_gae must run before update");
    let arch = params.arch.clone();
    let mut ws = Workspace::new(&arch);
    let mut grad = vec![0.0; params.theta.len()];
    let mut order: Vec<usize> = (0..buffer.len()).collect();
    let mut adv = Vec::with_capacity(hyper.batch_size);
    let mut stats = UpdateStats::default();

    for _ in 0..hyper.n_epochs {
        order.shuffle(rng);
        for idx in order.chunks(hyper.batch_size) {
            adv.clear();
            adv.extend(idx.iter().map(|&i| buffer.advantages[i]));
            normalize(&mut adv);
            grad.iter_mut().for_each(|g| *g = 0.0);
            let parts = minibatch_loss_ws(&params.theta, &arch, hyper, buffer, idx, &adv, Some(&mut grad), &mut ws);
            if !parts.total.is_finite() {
                return Err(PpoError::NumericalFault(format!("loss {} at gradient step {}", parts.total, stats.grad_steps)));
            }
            let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
            if !norm.is_finite() {
                return Err(PpoError::NumericalFault("non-finite gradient".into()));
            }
            if norm > hyper.max_grad_norm {
                let s = hyper.max_grad_norm / (norm + 1e-6);
                grad.iter_mut().for_each(|g| *g *= s);
            }
            adam_step(params, &grad, hyper.learning_rate, hyper.adam_eps);
            if stats.grad_steps == 0 {
                stats.first_policy_loss = parts.policy_loss;
            }
            stats.grad_steps += 1;
            stats.policy_loss += parts.policy_loss;
            stats.value_loss += parts.value_loss;
            stats.entropy += parts.entropy;
            stats.clip_fraction += parts.clip_fraction;
        }
    }
    let n = stats.grad_steps as f64;
    stats.policy_loss /= n;
    stats.value_loss /= n;
    stats.entropy /= n;
    stats.clip_fraction /= n;
    if !params.is_finite() {
        return Err(PpoError::NumericalFault("parameters became non-finite".into()));
    }
    Ok(stats)
}

/// Step-granular PPO training state: one environment step at a time, with
/// an update each time the rollout buffer fills.
#[derive(Debug, Clone)]
pub struct Learner {
    pub params: PolicyParams,
    pub hyper: PpoHyperparams,
    pub(crate) rng: Rng,
    pub(crate) buffer: RolloutBuffer,
    pub(crate) last_stats: Option<UpdateStats>,
}

impl Learner {
    pub fn new(seed: u64, arch: NetworkArch, hyper: PpoHyperparams) -> Result<Self, PpoError> {
        hyper.validate()?;
        let buffer = RolloutBuffer::new(arch.input_dim, hyper.n_steps);
        Ok(Self {
            params: PolicyParams::init(seed, arch),
            hyper,
            rng: seeded_rng(seed, AGENT_STREAM),
            buffer,
            last_stats: None,
        })
    }

    pub fn buffer(&self) -> &RolloutBuffer {
        &self.buffer
    }

    pub fn last_update(&self) -> Option<&UpdateStats> {
        self.last_stats.as_ref()
    }

    pub fn step<E: Environment>(&mut self, env: &mut E) -> Result<Step<E::Info>, PpoError> {
        let step = rollout_step(&self.params, env, &mut self.buffer, &mut self.rng)?;
        if self.buffer.len() == self.hyper.n_steps {
            self.buffer.last_value = value_of(&self.params, &env.observe()?)?;
            compute_gae(&mut self.buffer, self.hyper.gamma, self.hyper.gae_lambda);
            self.last_stats = Some(update(&mut self.params, &self.buffer, &self.hyper, &mut self.rng)?);
            self.buffer.clear();
        }
        Ok(step)
    }
}
