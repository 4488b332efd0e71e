/// On-policy transitions for one rollout, with GAE outputs once computed.
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutBuffer {
    pub obs_dim: usize,
    /// Row-major, `len() * obs_dim` values.
    pub observations: Vec<f64>,
    pub actions: Vec<usize>,
    pub log_probs: Vec<f64>,
    pub values: Vec<f64>,
    pub rewards: Vec<f64>,
    pub dones: Vec<bool>,
    /// Value estimate of the observation following the last step.
    pub last_value: f64,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
}

impl RolloutBuffer {
    pub fn new(obs_dim: usize, capacity: usize) -> Self {
        Self {
            obs_dim,
            observations: Vec::with_capacity(obs_dim * capacity),
            actions: Vec::with_capacity(capacity),
            log_probs: Vec::with_capacity(capacity),
            values: Vec::with_capacity(capacity),
            rewards: Vec::with_capacity(capacity),
            dones: Vec::with_capacity(capacity),
            last_value: 0.0,
            advantages: Vec::new(),
            returns: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn observation(&self, i: usize) -> &[f64] {
        &self.observations[i * self.obs_dim..(i + 1) * self.obs_dim]
    }

    pub fn push(&mut self, obs: &[f64], action: usize, log_prob: f64, value: f64, reward: f64, done: bool) {
        debug_assert_eq!(obs.len(), self.obs_dim);
        self.observations.extend_from_slice(obs);
        self.actions.push(action);
        self.log_probs.push(log_prob);
        self.values.push(value);
        self.rewards.push(reward);
        self.dones.push(done);
    }

    pub fn clear(&mut self) {
        self.observations.clear();
        self.actions.clear();
        self.log_probs.clear();
        self.values.clear();
        self.rewards.clear();
        self.dones.clear();
        self.advantages.clear();
        self.returns.clear();
        self.last_value = 0.0;
    }

    /// Episode segments as `start..end` ranges; a segment ends after a done flag.
    pub fn episodes(&self) -> Vec<std::ops::Range<usize>> {
        let mut out = Vec::new();
        let mut start = 0;
        for (i, &d) in self.dones.iter().enumerate() {
            if d {
                out.push(start..i + 1);
                start = i + 1;
            }
        }
        if start < self.len() {
            out.push(start..self.len());
        }
        out
    }
}

/// Generalized advantage estimation. A done flag at step `t` cuts both the
/// bootstrap and the advantage recursion; the trailing step bootstraps from
/// `last_value`.
pub fn compute_gae(buffer: &mut RolloutBuffer, gamma: f64, lambda: f64) {
    let n = buffer.len();
    buffer.advantages = vec![0.0; n];
    let mut next_adv = 0.0;
    let mut next_value = buffer.last_value;
    for t in (0..n).rev() {
        let live = if buffer.dones[t] { 0.0 } else { 1.0 };
        let delta = buffer.rewards[t] + gamma * next_value * live - buffer.values[t];
        next_adv = delta + gamma * lambda * live * next_adv;
        buffer.advantages[t] = next_adv;
        next_value = buffer.values[t];
    }
    buffer.returns = buffer.advantages.iter().zip(&buffer.values).map(|(a, v)| a + v).collect();
}
