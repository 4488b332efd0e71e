use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::interact::OBS_DIM;
use crate::duel::NUM_ACTIONS;
use crate::{seeded_rng, Rng};

/// Stream used to draw initial weights for a seed.
const INIT_STREAM: u64 = 2;

const HIDDEN_GAIN: f64 = std::f64::consts::SQRT_2;
const POLICY_HEAD_GAIN: f64 = 0.01;
const VALUE_HEAD_GAIN: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkArch {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub n_actions: usize,
}

impl Default for NetworkArch {
    fn default() -> Self {
        Self { input_dim: OBS_DIM, hidden: vec![64, 64], n_actions: NUM_ACTIONS }
    }
}

impl NetworkArch {
    pub fn policy_dims(&self) -> Vec<usize> {
        self.dims(self.n_actions)
    }

    pub fn value_dims(&self) -> Vec<usize> {
        self.dims(1)
    }

    fn dims(&self, out: usize) -> Vec<usize> {
        std::iter::once(self.input_dim).chain(self.hidden.iter().copied()).chain(std::iter::once(out)).collect()
    }

    pub fn policy_param_count(&self) -> usize {
        mlp_param_count(&self.policy_dims())
    }

    pub fn value_param_count(&self) -> usize {
        mlp_param_count(&self.value_dims())
    }

    pub fn param_count(&self) -> usize {
        self.policy_param_count() + self.value_param_count()
    }
}

pub(crate) fn mlp_param_count(dims: &[usize]) -> usize {
    dims.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

/// Network weights plus Adam moments.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParams {
    pub arch: NetworkArch,
    pub theta: Vec<f64>,
    pub adam_m: Vec<f64>,
    pub adam_v: Vec<f64>,
    pub adam_step: u64,
}

impl PolicyParams {
    /// Scaled-uniform init (variance `gain^2 / fan_in`), zero biases.
    pub fn init(seed: u64, arch: NetworkArch) -> Self {
        let mut rng = seeded_rng(seed, INIT_STREAM);
        let mut theta = Vec::with_capacity(arch.param_count());
        init_mlp(&arch.policy_dims(), POLICY_HEAD_GAIN, &mut rng, &mut theta);
        init_mlp(&arch.value_dims(), VALUE_HEAD_GAIN, &mut rng, &mut theta);
        Self::from_theta(arch, theta)
    }

    pub fn from_theta(arch: NetworkArch, theta: Vec<f64>) -> Self {
        let n = theta.len();
        assert_eq!(n, arch.param_count(), "parameter vector does not match architecture");
        Self { arch, theta, adam_m: vec![0.0; n], adam_v: vec![0.0; n], adam_step: 0 }
    }

    pub fn policy_theta(&self) -> &[f64] {
        &self.theta[..self.arch.policy_param_count()]
    }

    pub fn value_theta(&self) -> &[f64] {
        &self.theta[self.arch.policy_param_count()..]
    }

    pub fn is_finite(&self) -> bool {
        self.theta.iter().all(|v| v.is_finite())
    }
}

fn init_mlp(dims: &[usize], head_gain: f64, rng: &mut Rng, out: &mut Vec<f64>) {
    let last = dims.len() - 2;
    for (l, w) in dims.windows(2).enumerate() {
        let (fan_in, fan_out) = (w[0], w[1]);
        let gain = if l == last { head_gain } else { HIDDEN_GAIN };
        let limit = gain * (3.0 / fan_in as f64).sqrt();
        out.extend((0..fan_in * fan_out).map(|_| rng.random_range(-limit..=limit)));
        out.extend(std::iter::repeat_n(0.0, fan_out));
    }
}

/// Activations of one forward pass: `acts[0]` is the input, hidden layers
/// hold tanh outputs, the last entry holds the linear output.
#[derive(Debug, Clone, Default)]
pub(crate) struct Activations {
    pub acts: Vec<Vec<f64>>,
}

impl Activations {
    pub fn for_dims(dims: &[usize]) -> Self {
        Self { acts: dims.iter().map(|&d| vec![0.0; d]).collect() }
    }

    pub fn output(&self) -> &[f64] {
        self.acts.last().expect("non-empty")
    }
}

pub(crate) fn forward(theta: &[f64], dims: &[usize], x: &[f64], cache: &mut Activations) {
    cache.acts[0].copy_from_slice(x);
    let mut off = 0;
    let last = dims.len() - 2;
    for l in 0..dims.len() - 1 {
        let (n_in, n_out) = (dims[l], dims[l + 1]);
        let (w, rest) = theta[off..].split_at(n_in * n_out);
        let b = &rest[..n_out];
        let (before, after) = cache.acts.split_at_mut(l + 1);
        let input = &before[l];
        let output = &mut after[0];
        for o in 0..n_out {
            let row = &w[o * n_in..(o + 1) * n_in];
            let z = b[o] + row.iter().zip(input).map(|(a, b)| a * b).sum::<f64>();
            output[o] = if l == last { z } else { z.tanh() };
        }
        off += n_in * n_out + n_out;
    }
}

/// Accumulates `d loss / d theta` into `grad` given `d loss / d output`.
pub(crate) fn backward(theta: &[f64], dims: &[usize], cache: &Activations, d_out: &[f64], grad: &mut [f64], scratch: &mut Vec<f64>) {
    let n_layers = dims.len() - 1;
    let mut offsets = Vec::with_capacity(n_layers);
    let mut off = 0;
    for l in 0..n_layers {
        offsets.push(off);
        off += dims[l] * dims[l + 1] + dims[l + 1];
    }
    let mut delta = d_out.to_vec();
    for l in (0..n_layers).rev() {
        let (n_in, n_out) = (dims[l], dims[l + 1]);
        let off = offsets[l];
        let input = &cache.acts[l];
        {
            let (gw, gb) = grad[off..off + n_in * n_out + n_out].split_at_mut(n_in * n_out);
            for o in 0..n_out {
                let d = delta[o];
                if d == 0.0 {
                    continue;
                }
                gb[o] += d;
                for (g, a) in gw[o * n_in..(o + 1) * n_in].iter_mut().zip(input) {
                    *g += d * a;
                }
            }
        }
        if l > 0 {
            let w = &theta[off..off + n_in * n_out];
            scratch.clear();
            scratch.resize(n_in, 0.0);
            for o in 0..n_out {
                let d = delta[o];
                if d == 0.0 {
                    continue;
                }
                for (s, wv) in scratch.iter_mut().zip(&w[o * n_in..(o + 1) * n_in]) {
                    *s += d * wv;
                }
            }
            // input of layer l is a tanh output
            for (s, a) in scratch.iter_mut().zip(input) {
                *s *= 1.0 - a * a;
            }
            std::mem::swap(&mut delta, scratch);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closed_form_parameter_count() {
        let arch = NetworkArch::default();
        let policy = (23 * 64 + 64) + (64 * 64 + 64) + (64 * 8 + 8);
        let value = (23 * 64 + 64) + (64 * 64 + 64) + (64 + 1);
        assert_eq!(arch.policy_param_count(), policy);
        assert_eq!(arch.param_count(), policy + value);
        assert_eq!(arch.param_count(), 11_977);
        assert_eq!(PolicyParams::init(0, arch).theta.len(), 11_977);
    }

    #[test]
    fn init_is_seeded() {
        let a = PolicyParams::init(4, NetworkArch::default());
        assert_eq!(a, PolicyParams::init(4, NetworkArch::default()));
        assert_ne!(a.theta, PolicyParams::init(5, NetworkArch::default()).theta);
        assert!(a.adam_m.iter().chain(&a.adam_v).all(|&v| v == 0.0));
    }

    #[test]
    fn head_init_scale() {
        let a = PolicyParams::init(1, NetworkArch::default());
        let dims = a.arch.policy_dims();
        let head_start = mlp_param_count(&dims[..3]);
        let limit = 0.01 * (3.0f64 / 64.0).sqrt();
        assert!(a.theta[head_start..head_start + 64 * 8].iter().all(|w| w.abs() <= limit));
    }
}
