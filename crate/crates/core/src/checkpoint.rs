//! Binary checkpoint container.
//!
//! Layout (little-endian): magic, format version, network and optimizer
//! header, flat parameter block, NPC generator section, optional resume
//! section, then a SHA-256 digest of everything before it.

use std::collections::VecDeque;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::duel::{AttributeId, DuelConfig, DuelReport, DuelState, NpcProfile, Outcome, Tallies, NUM_ATTRS};
use crate::harness::LoggerState;
use crate::interact::{DuelEnv, Gii, Phase, RewardConfig};
use crate::pcg::{Chromosome, GaParams, PcgState, PcgVersion, Population, WeightVector};
use crate::ppo::{Learner, NetworkArch, PolicyParams, PpoHyperparams, RolloutBuffer};
use crate::RngState;

pub const MAGIC: &[u8; 8] = b"PCGECKPT";
pub const FORMAT_VERSION: u32 = 1;
const DIGEST_LEN: usize = 32;

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("checkpoint I/O on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("checkpoint format version {found}, this build reads {expected}")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("corrupted checkpoint: {0}")]
    Corrupt(String),
}

fn corrupt<T>(msg: impl Into<String>) -> Result<T, CheckpointError> {
    Err(CheckpointError::Corrupt(msg.into()))
}

/// Everything needed to continue a training run exactly where it stopped.
#[derive(Debug, Clone, PartialEq)]
pub struct ResumeState {
    pub duel_config: DuelConfig,
    pub reward: RewardConfig,
    pub env_rng: RngState,
    pub phase: Phase,
    pub spawned: u64,
    pub last_report: Option<DuelReport>,
    pub duel: DuelState,
    /// Partially filled rollout buffer.
    pub buffer: RolloutBuffer,
    pub logger: LoggerState,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub sga_count: u64,
    pub hyper: PpoHyperparams,
    pub params: PolicyParams,
    pub agent_rng: RngState,
    pub pcg: PcgState,
    pub resume: Option<ResumeState>,
}

impl Checkpoint {
    pub fn capture(learner: &Learner, env: &DuelEnv, logger: &LoggerState) -> Self {
        let duel = env.gii.duel().expect("a duel is always loaded").clone();
        Self {
            sga_count: env.sga_count,
            hyper: learner.hyper,
            params: learner.params.clone(),
            agent_rng: RngState::capture(&learner.rng),
            pcg: env.pcg.clone(),
            resume: Some(ResumeState {
                duel_config: env.duel_config,
                reward: env.reward,
                env_rng: RngState::capture(&env.rng),
                phase: env.phase,
                spawned: env.spawned,
                last_report: env.last_report,
                duel,
                buffer: learner.buffer.clone(),
                logger: logger.clone(),
            }),
        }
    }

    /// Rebuilds the live training objects. Fails when the checkpoint carries
    /// no resume section.
    pub fn into_training(self) -> Result<(Learner, DuelEnv, LoggerState), CheckpointError> {
        let Some(r) = self.resume else {
            return corrupt("checkpoint has no resume section");
        };
        let learner = Learner {
            params: self.params,
            hyper: self.hyper,
            rng: self.agent_rng.restore(),
            buffer: r.buffer,
            last_stats: None,
        };
        let env = DuelEnv {
            gii: Gii::with_duel(r.duel),
            duel_config: r.duel_config,
            reward: r.reward,
            pcg: self.pcg,
            rng: r.env_rng.restore(),
            sga_count: self.sga_count,
            phase: r.phase,
            spawned: r.spawned,
            last_report: r.last_report,
        };
        Ok((learner, env, r.logger))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::default();
        w.bytes(MAGIC);
        w.u32(FORMAT_VERSION);
        put_arch(&mut w, &self.params.arch);
        put_hyper(&mut w, &self.hyper);
        w.u64(self.sga_count);
        put_rng(&mut w, &self.agent_rng);

        let p = &self.params;
        w.u64(p.theta.len() as u64);
        for block in [&p.theta, &p.adam_m, &p.adam_v] {
            block.iter().for_each(|&x| w.f64(x));
        }
        w.u64(p.adam_step);

        put_pcg(&mut w, &self.pcg);

        match &self.resume {
            None => w.u8(0),
            Some(r) => {
                w.u8(1);
                put_resume(&mut w, r);
            }
        }
        let digest = Sha256::digest(&w.buf);
        w.bytes(&digest);
        w.buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        if bytes.len() < MAGIC.len() + 4 + DIGEST_LEN {
            return corrupt(format!("only {} bytes", bytes.len()));
        }
        if &bytes[..MAGIC.len()] != MAGIC {
            return corrupt("bad magic");
        }
        let (body, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
        if Sha256::digest(body).as_slice() != digest {
            return corrupt("checksum mismatch");
        }
        let mut r = Reader { buf: body, pos: MAGIC.len() };
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(CheckpointError::VersionMismatch { found: version, expected: FORMAT_VERSION });
        }
        let arch = get_arch(&mut r)?;
        let hyper = get_hyper(&mut r)?;
        let sga_count = r.u64()?;
        let agent_rng = get_rng(&mut r)?;

        let n = r.len()?;
        if n != arch.param_count() {
            return corrupt(format!("{n} parameters for an architecture of {}", arch.param_count()));
        }
        let theta = r.f64_vec(n)?;
        let adam_m = r.f64_vec(n)?;
        let adam_v = r.f64_vec(n)?;
        let adam_step = r.u64()?;
        let params = PolicyParams { arch, theta, adam_m, adam_v, adam_step };

        let pcg = get_pcg(&mut r)?;
        let resume = match r.u8()? {
            0 => None,
            1 => Some(get_resume(&mut r, &params.arch, hyper.n_steps)?),
            t => return corrupt(format!("resume tag {t}")),
        };
        if r.pos != body.len() {
            return corrupt(format!("{} trailing bytes", body.len() - r.pos));
        }
        Ok(Self { sga_count, hyper, params, agent_rng, pcg, resume })
    }
}

/// Writes atomically through a sibling temporary file.
pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<(), CheckpointError> {
    let io = |source| CheckpointError::Io { path: path.to_path_buf(), source };
    let tmp = path.with_extension("tmp");
    let mut f = std::fs::File::create(&tmp).map_err(io)?;
    f.write_all(&ckpt.to_bytes()).map_err(io)?;
    f.sync_all().map_err(io)?;
    drop(f);
    std::fs::rename(&tmp, path).map_err(io)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, CheckpointError> {
    let bytes = std::fs::read(path).map_err(|source| CheckpointError::Io { path: path.to_path_buf(), source })?;
    Checkpoint::from_bytes(&bytes)
}

#[derive(Default)]
struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn bytes(&mut self, b: &[u8]) {
        self.buf.extend_from_slice(b);
    }
    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.bytes(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.bytes(&v.to_le_bytes());
    }
    fn u128(&mut self, v: u128) {
        self.bytes(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.bytes(&v.to_le_bytes());
    }
    fn u32s(&mut self, v: &[u32]) {
        v.iter().for_each(|&x| self.u32(x));
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        if self.buf.len() - self.pos < n {
            return corrupt("unexpected end of data");
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn arr<const N: usize>(&mut self) -> Result<[u8; N], CheckpointError> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }
    fn u8(&mut self) -> Result<u8, CheckpointError> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.arr()?))
    }
    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.arr()?))
    }
    fn u128(&mut self) -> Result<u128, CheckpointError> {
        Ok(u128::from_le_bytes(self.arr()?))
    }
    fn f64(&mut self) -> Result<f64, CheckpointError> {
        Ok(f64::from_le_bytes(self.arr()?))
    }
    /// A length prefix, bounded by the bytes that remain.
    fn len(&mut self) -> Result<usize, CheckpointError> {
        let n = self.u64()?;
        if n > (self.buf.len() - self.pos) as u64 {
            return corrupt(format!("length {n} exceeds remaining data"));
        }
        Ok(n as usize)
    }
    fn f64_vec(&mut self, n: usize) -> Result<Vec<f64>, CheckpointError> {
        (0..n).map(|_| self.f64()).collect()
    }
    fn u32_arr(&mut self) -> Result<[u32; NUM_ATTRS], CheckpointError> {
        let mut out = [0; NUM_ATTRS];
        for v in &mut out {
            *v = self.u32()?;
        }
        Ok(out)
    }
    fn attr(&mut self) -> Result<AttributeId, CheckpointError> {
        let b = self.u8()?;
        AttributeId::new(b as usize).map_or_else(|| corrupt(format!("attribute {b}")), Ok)
    }
}

fn put_arch(w: &mut Writer, a: &NetworkArch) {
    w.u32(a.input_dim as u32);
    w.u32(a.hidden.len() as u32);
    a.hidden.iter().for_each(|&h| w.u32(h as u32));
    w.u32(a.n_actions as u32);
}

fn get_arch(r: &mut Reader) -> Result<NetworkArch, CheckpointError> {
    let input_dim = r.u32()? as usize;
    let layers = r.u32()? as usize;
    if layers > 64 {
        return corrupt(format!("{layers} hidden layers"));
    }
    let hidden = (0..layers).map(|_| r.u32().map(|h| h as usize)).collect::<Result<Vec<_>, _>>()?;
    let n_actions = r.u32()? as usize;
    if input_dim == 0 || n_actions == 0 || hidden.contains(&0) {
        return corrupt("zero-width layer");
    }
    Ok(NetworkArch { input_dim, hidden, n_actions })
}

fn put_hyper(w: &mut Writer, h: &PpoHyperparams) {
    for v in [h.n_steps, h.batch_size, h.n_epochs] {
        w.u64(v as u64);
    }
    for v in [
        h.learning_rate,
        h.gamma,
        h.gae_lambda,
        h.clip_range,
        h.vf_coef,
        h.entropy_coef,
        h.max_grad_norm,
        h.adam_eps,
    ] {
        w.f64(v);
    }
}

fn get_hyper(r: &mut Reader) -> Result<PpoHyperparams, CheckpointError> {
    let h = PpoHyperparams {
        n_steps: r.u64()? as usize,
        batch_size: r.u64()? as usize,
        n_epochs: r.u64()? as usize,
        learning_rate: r.f64()?,
        gamma: r.f64()?,
        gae_lambda: r.f64()?,
        clip_range: r.f64()?,
        vf_coef: r.f64()?,
        entropy_coef: r.f64()?,
        max_grad_norm: r.f64()?,
        adam_eps: r.f64()?,
    };
    h.validate().map_err(|e| CheckpointError::Corrupt(e.to_string()))?;
    Ok(h)
}

fn put_rng(w: &mut Writer, s: &RngState) {
    w.bytes(&s.seed);
    w.u64(s.stream);
    w.u128(s.word_pos);
}

fn get_rng(r: &mut Reader) -> Result<RngState, CheckpointError> {
    Ok(RngState { seed: r.arr()?, stream: r.u64()?, word_pos: r.u128()? })
}

fn put_pcg(w: &mut Writer, p: &PcgState) {
    w.u8(p.version.number());
    w.u64(p.params.population_size as u64);
    w.f64(p.params.mutation_prob);
    w.f64(p.params.delta);
    w.f64(p.params.v3_step);
    p.weights.0.iter().for_each(|&x| w.f64(x));
    match &p.population {
        None => w.u8(0),
        Some(pop) => {
            w.u8(1);
            w.u64(pop.members.len() as u64);
            pop.members.iter().for_each(|c| w.u8(c.bits()));
            w.u64(pop.generation_index);
        }
    }
}

fn get_pcg(r: &mut Reader) -> Result<PcgState, CheckpointError> {
    let tag = r.u8()?;
    let version = PcgVersion::from_number(tag).map_or_else(|| corrupt(format!("generator version {tag}")), Ok)?;
    let params = GaParams {
        population_size: r.u64()? as usize,
        mutation_prob: r.f64()?,
        delta: r.f64()?,
        v3_step: r.f64()?,
    };
    params.validate().map_err(|e| CheckpointError::Corrupt(e.to_string()))?;
    let mut weights = WeightVector::default();
    for x in &mut weights.0 {
        *x = r.f64()?;
    }
    let population = match r.u8()? {
        0 => None,
        1 => {
            let n = r.len()?;
            let members = (0..n)
                .map(|_| {
                    let b = r.u8()?;
                    Chromosome::from_bits(b).map_or_else(|| corrupt(format!("chromosome bits {b:#09b}")), Ok)
                })
                .collect::<Result<Vec<_>, _>>()?;
            Some(Population { members, generation_index: r.u64()? })
        }
        t => return corrupt(format!("population tag {t}")),
    };
    if population.is_some() != version.uses_ga() {
        return corrupt("population presence does not match generator version");
    }
    Ok(PcgState { version, params, weights, population })
}

fn put_outcome(w: &mut Writer, o: Option<Outcome>) {
    w.u8(match o {
        None => 0,
        Some(Outcome::Win) => 1,
        Some(Outcome::Loss) => 2,
    });
}

fn get_outcome(r: &mut Reader) -> Result<Option<Outcome>, CheckpointError> {
    match r.u8()? {
        0 => Ok(None),
        1 => Ok(Some(Outcome::Win)),
        2 => Ok(Some(Outcome::Loss)),
        t => corrupt(format!("outcome tag {t}")),
    }
}

fn put_duel_config(w: &mut Writer, c: &DuelConfig) {
    w.u32s(&[c.args_per_attribute, c.copies_per_attribute_in_deck, c.initial_hand_size, c.turn_limit]);
}

fn get_duel_config(r: &mut Reader) -> Result<DuelConfig, CheckpointError> {
    let c = DuelConfig {
        args_per_attribute: r.u32()?,
        copies_per_attribute_in_deck: r.u32()?,
        initial_hand_size: r.u32()?,
        turn_limit: r.u32()?,
    };
    c.validate().map_err(|e| CheckpointError::Corrupt(e.to_string()))?;
    Ok(c)
}

fn put_duel(w: &mut Writer, d: &DuelState) {
    d.profile.attributes().iter().for_each(|a| w.u8(a.index() as u8));
    put_duel_config(w, &d.config);
    w.u64(d.seed);
    w.u64(d.queue.len() as u64);
    d.queue.iter().for_each(|a| w.u8(a.index() as u8));
    w.u32s(&d.hand);
    w.u64(d.deck.len() as u64);
    d.deck.iter().for_each(|a| w.u8(a.index() as u8));
    w.u32(d.discarded);
    w.u32(d.turns_used);
    w.u32s(&d.tallies.played_correctly);
    w.u32s(&d.tallies.played_incorrectly);
    w.u32s(&d.tallies.args_destroyed);
    put_outcome(w, d.outcome);
}

fn get_duel(r: &mut Reader) -> Result<DuelState, CheckpointError> {
    let attrs = [r.u8()? as usize, r.u8()? as usize, r.u8()? as usize];
    let profile = NpcProfile::new(attrs).map_err(|e| CheckpointError::Corrupt(e.to_string()))?;
    let config = get_duel_config(r)?;
    let seed = r.u64()?;
    let n = r.len()?;
    let queue = (0..n).map(|_| r.attr()).collect::<Result<VecDeque<_>, _>>()?;
    let hand = r.u32_arr()?;
    let n = r.len()?;
    let deck = (0..n).map(|_| r.attr()).collect::<Result<VecDeque<_>, _>>()?;
    let discarded = r.u32()?;
    let turns_used = r.u32()?;
    let tallies = Tallies {
        played_correctly: r.u32_arr()?,
        played_incorrectly: r.u32_arr()?,
        args_destroyed: r.u32_arr()?,
    };
    let outcome = get_outcome(r)?;
    let cards = hand.iter().map(|&h| h as u64).sum::<u64>() + deck.len() as u64 + discarded as u64;
    if cards != config.deck_size() as u64 || queue.len() > config.queue_len() as usize || turns_used > config.turn_limit {
        return corrupt("duel state violates card or turn bounds");
    }
    if queue.iter().any(|&a| !profile.contains(a)) {
        return corrupt("queue holds an attribute outside the profile");
    }
    Ok(DuelState { profile, config, seed, queue, hand, deck, discarded, turns_used, tallies, outcome })
}

fn put_report(w: &mut Writer, rep: &Option<DuelReport>) {
    match rep {
        None => w.u8(0),
        Some(rep) => {
            w.u8(1);
            put_outcome(w, Some(rep.outcome));
            w.u32s(&rep.npc_args_not_destroyed);
            w.u32s(&rep.played_correctly);
            w.u32s(&rep.played_incorrectly);
            w.u32s(&rep.unplayed);
        }
    }
}

fn get_report(r: &mut Reader) -> Result<Option<DuelReport>, CheckpointError> {
    match r.u8()? {
        0 => Ok(None),
        1 => {
            let Some(outcome) = get_outcome(r)? else {
                return corrupt("report without outcome");
            };
            Ok(Some(DuelReport {
                outcome,
                npc_args_not_destroyed: r.u32_arr()?,
                played_correctly: r.u32_arr()?,
                played_incorrectly: r.u32_arr()?,
                unplayed: r.u32_arr()?,
            }))
        }
        t => corrupt(format!("report tag {t}")),
    }
}

fn put_buffer(w: &mut Writer, b: &RolloutBuffer) {
    w.u64(b.len() as u64);
    for i in 0..b.len() {
        b.observation(i).iter().for_each(|&x| w.f64(x));
        w.u32(b.actions[i] as u32);
        w.f64(b.log_probs[i]);
        w.f64(b.values[i]);
        w.f64(b.rewards[i]);
        w.u8(b.dones[i] as u8);
    }
}

fn get_buffer(r: &mut Reader, arch: &NetworkArch, capacity: usize) -> Result<RolloutBuffer, CheckpointError> {
    let n = r.len()?;
    if n >= capacity {
        return corrupt(format!("rollout buffer of {n} steps with capacity {capacity}"));
    }
    let mut b = RolloutBuffer::new(arch.input_dim, capacity);
    for _ in 0..n {
        let obs = r.f64_vec(arch.input_dim)?;
        let action = r.u32()? as usize;
        if action >= arch.n_actions {
            return corrupt(format!("action {action}"));
        }
        let (lp, v, rew) = (r.f64()?, r.f64()?, r.f64()?);
        let done = match r.u8()? {
            0 => false,
            1 => true,
            t => return corrupt(format!("done flag {t}")),
        };
        b.push(&obs, action, lp, v, rew, done);
    }
    Ok(b)
}

fn put_logger(w: &mut Writer, l: &LoggerState) {
    for v in [l.games_window, l.wins_window, l.games_total, l.wins_total] {
        w.u64(v);
    }
    w.f64(l.cum_reward);
    w.u64(l.attr_window as u64);
    w.u64(l.recent.len() as u64);
    l.recent.iter().for_each(|&m| w.u8(m));
}

fn get_logger(r: &mut Reader) -> Result<LoggerState, CheckpointError> {
    let mut l = LoggerState {
        games_window: r.u64()?,
        wins_window: r.u64()?,
        games_total: r.u64()?,
        wins_total: r.u64()?,
        cum_reward: r.f64()?,
        attr_window: r.u64()? as usize,
        recent: VecDeque::new(),
    };
    let n = r.len()?;
    if n > l.attr_window {
        return corrupt("attribute window overflow");
    }
    for _ in 0..n {
        let m = r.u8()?;
        if m >= 1 << NUM_ATTRS || m.count_ones() != 3 {
            return corrupt(format!("profile mask {m:#09b}"));
        }
        l.recent.push_back(m);
    }
    Ok(l)
}

fn put_resume(w: &mut Writer, r: &ResumeState) {
    put_duel_config(w, &r.duel_config);
    for v in [r.reward.impactful_reward, r.reward.win_reward, r.reward.step_penalty] {
        w.f64(v);
    }
    put_rng(w, &r.env_rng);
    w.u8(match r.phase {
        Phase::Ready => 0,
        Phase::Running => 1,
        Phase::Terminated => 2,
    });
    w.u64(r.spawned);
    put_report(w, &r.last_report);
    put_duel(w, &r.duel);
    put_buffer(w, &r.buffer);
    put_logger(w, &r.logger);
}

fn get_resume(r: &mut Reader, arch: &NetworkArch, capacity: usize) -> Result<ResumeState, CheckpointError> {
    let duel_config = get_duel_config(r)?;
    let reward = RewardConfig { impactful_reward: r.f64()?, win_reward: r.f64()?, step_penalty: r.f64()? };
    let env_rng = get_rng(r)?;
    let phase = match r.u8()? {
        0 => Phase::Ready,
        1 => Phase::Running,
        2 => Phase::Terminated,
        t => return corrupt(format!("phase tag {t}")),
    };
    let spawned = r.u64()?;
    let last_report = get_report(r)?;
    let duel = get_duel(r)?;
    let buffer = get_buffer(r, arch, capacity)?;
    let logger = get_logger(r)?;
    Ok(ResumeState { duel_config, reward, env_rng, phase, spawned, last_report, duel, buffer, logger })
}
