use pcgeval::interact::{EnvError, Environment, SpaceDescriptor, Step};
use pcgeval::ppo::{
    action_probs, collect_rollout, compute_gae, minibatch_loss, update, value_of, Learner, NetworkArch, PolicyParams,
    PpoHyperparams, RolloutBuffer,
};
use pcgeval::seeded_rng;
use rand::Rng;

/// Central-difference gradient of the minibatch loss.
fn numeric_grad(
    theta: &[f64],
    arch: &NetworkArch,
    hyper: &PpoHyperparams,
    buf: &RolloutBuffer,
    idx: &[usize],
    adv: &[f64],
    h: f64,
) -> Vec<f64> {
    let mut t = theta.to_vec();
    (0..theta.len())
        .map(|i| {
            t[i] = theta[i] + h;
            let up = minibatch_loss(&t, arch, hyper, buf, idx, adv, None).total;
            t[i] = theta[i] - h;
            let down = minibatch_loss(&t, arch, hyper, buf, idx, adv, None).total;
            t[i] = theta[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

fn random_case(seed: u64) -> (PolicyParams, RolloutBuffer, Vec<usize>, Vec<f64>) {
    let mut rng = seeded_rng(seed, 9);
    let arch = NetworkArch { input_dim: 5, hidden: vec![6, 4], n_actions: 3 };
    let mut params = PolicyParams::init(seed, arch.clone());
    // spread the weights so the policy is far from uniform
    for w in &mut params.theta {
        *w += rng.random_range(-0.5..0.5);
    }
    let mut buf = RolloutBuffer::new(5, 6);
    for _ in 0..6 {
        let obs: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
        let a = rng.random_range(0..3);
        let p = action_probs(&params, &obs).unwrap();
        // old log-probs around the current ones, so some ratios leave the clip range
        let old = p[a].ln() + rng.random_range(-0.4..0.4);
        buf.push(&obs, a, old, rng.random_range(-1.0..1.0), rng.random_range(-2.0..2.0), rng.random_bool(0.2));
    }
    buf.last_value = 0.3;
    compute_gae(&mut buf, 0.9, 0.8);
    let idx = vec![0, 2, 3, 5];
    let adv: Vec<f64> = (0..4).map(|_| rng.random_range(-1.5..1.5)).collect();
    (params, buf, idx, adv)
}

fn max_rel_error(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(1e-6))
        .fold(0.0, f64::max)
}

#[test]
fn backprop_matches_finite_differences() {
    let hyper = PpoHyperparams { entropy_coef: 0.01, ..PpoHyperparams::default() };
    for seed in 0..20 {
        let (params, buf, idx, adv) = random_case(seed);
        let mut g = vec![0.0; params.theta.len()];
        minibatch_loss(&params.theta, &params.arch, &hyper, &buf, &idx, &adv, Some(&mut g));
        let n = numeric_grad(&params.theta, &params.arch, &hyper, &buf, &idx, &adv, 1e-5);
        let err = max_rel_error(&g, &n);
        assert!(err < 1e-4, "seed {seed}: relative error {err:e}");
    }
}

#[test]
fn clipped_terms_never_exceed_the_clip_range() {
    let hyper = PpoHyperparams::default();
    for seed in 0..10 {
        let (params, buf, idx, adv) = random_case(seed);
        let parts = minibatch_loss(&params.theta, &params.arch, &hyper, &buf, &idx, &adv, None);
        // elementwise pessimistic bound
        let mut expected = 0.0;
        for (k, &i) in idx.iter().enumerate() {
            let p = action_probs(&params, buf.observation(i)).unwrap();
            let r = (p[buf.actions[i]].ln() - buf.log_probs[i]).exp();
            let clipped = r.clamp(0.8, 1.2) * adv[k];
            let chosen = (r * adv[k]).min(clipped);
            assert!(chosen <= clipped + 1e-12);
            expected -= chosen / idx.len() as f64;
        }
        assert!((parts.policy_loss - expected).abs() < 1e-12);
    }
}

/// One-step episodes: the observation names the state and the matching
/// action pays +1, the other -1.
struct Bandit {
    rng: pcgeval::Rng,
    state: usize,
}

impl Environment for Bandit {
    type Info = ();

    fn spaces(&self) -> SpaceDescriptor {
        SpaceDescriptor { action_dim: 2, observation_dim: 2 }
    }

    fn observe(&self) -> Result<Vec<f64>, EnvError> {
        let mut o = vec![0.0; 2];
        o[self.state] = 1.0;
        Ok(o)
    }

    fn step(&mut self, action: usize) -> Result<Step<()>, EnvError> {
        let reward = if action == self.state { 1.0 } else { -1.0 };
        self.state = self.rng.random_range(0..2);
        Ok(Step { observation: self.observe()?, reward, terminated: true, info: () })
    }

    fn reset(&mut self) -> Result<Vec<f64>, EnvError> {
        self.observe()
    }
}

#[test]
fn bandit_policy_becomes_near_deterministic() {
    let arch = NetworkArch { input_dim: 2, hidden: vec![64, 64], n_actions: 2 };
    let hyper = PpoHyperparams::default();
    let mut learner = Learner::new(4, arch, hyper).unwrap();
    let mut env = Bandit { rng: seeded_rng(4, 1), state: 0 };
    let mut reached = None;
    for rollout in 1..=50 {
        for _ in 0..hyper.n_steps {
            learner.step(&mut env).unwrap();
        }
        let p0 = action_probs(&learner.params, &[1.0, 0.0]).unwrap()[0];
        let p1 = action_probs(&learner.params, &[0.0, 1.0]).unwrap()[1];
        if p0 >= 0.99 && p1 >= 0.99 {
            reached = Some(rollout);
            break;
        }
    }
    assert!(reached.is_some(), "better action never reached probability 0.99 within 50 rollouts");
}

/// Never-ending episode with the same observation and reward every step.
struct Constant;

impl Environment for Constant {
    type Info = ();

    fn spaces(&self) -> SpaceDescriptor {
        SpaceDescriptor { action_dim: 2, observation_dim: 3 }
    }

    fn observe(&self) -> Result<Vec<f64>, EnvError> {
        Ok(vec![0.5, -0.5, 1.0])
    }

    fn step(&mut self, _action: usize) -> Result<Step<()>, EnvError> {
        Ok(Step { observation: self.observe()?, reward: 1.0, terminated: false, info: () })
    }

    fn reset(&mut self) -> Result<Vec<f64>, EnvError> {
        self.observe()
    }
}

#[test]
fn value_converges_to_discounted_constant() {
    let arch = NetworkArch { input_dim: 3, hidden: vec![64, 64], n_actions: 2 };
    let hyper = PpoHyperparams::default();
    let mut learner = Learner::new(11, arch, hyper).unwrap();
    let mut env = Constant;
    for _ in 0..200 * hyper.n_steps {
        learner.step(&mut env).unwrap();
    }
    let target = 1.0 / (1.0 - hyper.gamma);
    let v = value_of(&learner.params, &env.observe().unwrap()).unwrap();
    assert!((v - target).abs() <= 0.05 * target, "V = {v}, target {target}");
}

#[test]
fn first_minibatch_policy_loss_is_zero() {
    let arch = NetworkArch::default();
    let hyper = PpoHyperparams::default();
    let mut params = PolicyParams::init(2, arch);
    let mut env = pcgeval::interact::DuelEnv::new(
        pcgeval::pcg::PcgVersion::V1Random,
        Default::default(),
        Default::default(),
        Default::default(),
        2,
    )
    .unwrap();
    let mut rng = seeded_rng(2, 0);
    let mut buf = collect_rollout(&params, &mut env, hyper.n_steps, &mut rng).unwrap();
    assert_eq!(buf.len(), 128);
    assert_eq!(env.sga_count(), 128);
    compute_gae(&mut buf, hyper.gamma, hyper.gae_lambda);
    let stats = update(&mut params, &buf, &hyper, &mut rng).unwrap();
    assert_eq!(stats.grad_steps, 320);
    assert!(stats.first_policy_loss.abs() < 1e-6, "{}", stats.first_policy_loss);
}

#[test]
fn training_is_bit_reproducible() {
    let run = || {
        let mut learner = Learner::new(6, NetworkArch::default(), PpoHyperparams::default()).unwrap();
        let mut env = pcgeval::interact::DuelEnv::new(
            pcgeval::pcg::PcgVersion::V2Raw,
            Default::default(),
            Default::default(),
            Default::default(),
            6,
        )
        .unwrap();
        for _ in 0..3 * 128 {
            learner.step(&mut env).unwrap();
        }
        learner.params.theta.iter().map(|x| x.to_bits()).collect::<Vec<_>>()
    };
    assert_eq!(run(), run());
}

#[test]
fn parameter_count_closed_form() {
    let a = NetworkArch::default();
    let policy = (23 * 64 + 64) + (64 * 64 + 64) + (64 * 8 + 8);
    let value = (23 * 64 + 64) + (64 * 64 + 64) + (64 + 1);
    assert_eq!(a.param_count(), policy + value);
    let p = PolicyParams::init(0, a);
    assert_eq!(p.theta.len(), policy + value);
    assert_ne!(p.theta, PolicyParams::init(1, NetworkArch::default()).theta);
}
