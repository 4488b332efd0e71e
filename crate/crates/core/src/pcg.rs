//! NPC profile generation.
//!
//! Version 1 draws profiles uniformly at random. Versions 2 and 3 run a
//! genetic algorithm over 7-gene chromosomes with exactly three active
//! genes; a shared per-attribute weight vector tracks how the player fares
//! against each attribute and drives parent selection. Version 2 applies the
//! per-duel weight changes as they are, version 3 z-scores them first.

use std::fmt;
use std::str::FromStr;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::duel::{AttributeId, DuelReport, NpcProfile, Outcome, NUM_ATTRS, PROFILE_LEN};
use crate::Rng;

/// Number of 3-of-7 attribute sets.
pub const NUM_COMBOS: usize = 35;

/// Below this spread a delta vector is treated as constant by the version-3 update.
const SIGMA_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PcgError {
    #[error("invalid GA parameters: {0}")]
    Params(String),
    #[error("population is empty")]
    EmptyPopulation,
    #[error("unknown version {0:?} (expected 1, 2 or 3)")]
    UnknownVersion(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PcgVersion {
    #[serde(rename = "v1")]
    V1Random,
    #[serde(rename = "v2")]
    V2Raw,
    #[serde(rename = "v3")]
    V3Normalized,
}

impl PcgVersion {
    pub const ALL: [PcgVersion; 3] = [Self::V1Random, Self::V2Raw, Self::V3Normalized];

    pub fn number(self) -> u8 {
        match self {
            Self::V1Random => 1,
            Self::V2Raw => 2,
            Self::V3Normalized => 3,
        }
    }

    pub fn from_number(n: u8) -> Option<Self> {
        match n {
            1 => Some(Self::V1Random),
            2 => Some(Self::V2Raw),
            3 => Some(Self::V3Normalized),
            _ => None,
        }
    }

    pub fn uses_ga(self) -> bool {
        self != Self::V1Random
    }
}

impl fmt::Display for PcgVersion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "v{}", self.number())
    }
}

impl FromStr for PcgVersion {
    type Err = PcgError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let t = s.trim();
        let digits = t.strip_prefix(['v', 'V']).unwrap_or(t);
        digits
            .parse::<u8>()
            .ok()
            .and_then(Self::from_number)
            .ok_or_else(|| PcgError::UnknownVersion(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GaParams {
    pub population_size: usize,
    pub mutation_prob: f64,
    /// Weight change per counted card event.
    pub delta: f64,
    /// Scale applied to z-scored updates in version 3.
    pub v3_step: f64,
}

impl Default for GaParams {
    fn default() -> Self {
        Self { population_size: 10, mutation_prob: 0.05, delta: 1.0, v3_step: 0.5 }
    }
}

impl GaParams {
    pub fn validate(&self) -> Result<(), PcgError> {
        if self.population_size < 4 || self.population_size % 2 != 0 {
            return Err(PcgError::Params(format!(
                "population_size must be even and >= 4, got {}",
                self.population_size
            )));
        }
        if !(0.0..=1.0).contains(&self.mutation_prob) {
            return Err(PcgError::Params(format!("mutation_prob {} outside [0, 1]", self.mutation_prob)));
        }
        if !(self.delta > 0.0 && self.delta.is_finite()) {
            return Err(PcgError::Params(format!("delta must be positive, got {}", self.delta)));
        }
        if !(self.v3_step > 0.0 && self.v3_step.is_finite()) {
            return Err(PcgError::Params(format!("v3_step must be positive, got {}", self.v3_step)));
        }
        Ok(())
    }
}

/// Seven binary genes packed in the low bits, exactly three set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Chromosome(u8);

impl Chromosome {
    pub fn from_bits(bits: u8) -> Option<Self> {
        (bits < (1 << NUM_ATTRS) && bits.count_ones() as usize == PROFILE_LEN).then_some(Self(bits))
    }

    /// Parses `"1110000"` style strings, gene 0 first.
    pub fn from_gene_str(s: &str) -> Option<Self> {
        gene_str_bits(s).and_then(Self::from_bits)
    }

    pub fn bits(self) -> u8 {
        self.0
    }

    pub fn is_active(self, a: AttributeId) -> bool {
        self.0 & (1 << a.index()) != 0
    }

    /// Active attributes in ascending order.
    pub fn active(self) -> [AttributeId; PROFILE_LEN] {
        let mut out = [AttributeId::new(0).unwrap(); PROFILE_LEN];
        let mut k = 0;
        for a in AttributeId::all().filter(|&a| self.is_active(a)) {
            out[k] = a;
            k += 1;
        }
        out
    }
}

impl fmt::Display for Chromosome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for i in 0..NUM_ATTRS {
            f.write_str(if self.0 & (1 << i) != 0 { "1" } else { "0" })?;
        }
        Ok(())
    }
}

pub(crate) fn gene_str_bits(s: &str) -> Option<u8> {
    if s.len() != NUM_ATTRS {
        return None;
    }
    s.bytes().enumerate().try_fold(0u8, |m, (i, c)| match c {
        b'1' => Some(m | (1 << i)),
        b'0' => Some(m),
        _ => None,
    })
}

/// All 3-of-7 attribute sets in lexicographic order.
pub fn all_combos() -> Vec<[AttributeId; PROFILE_LEN]> {
    let mut out = Vec::with_capacity(NUM_COMBOS);
    for i in 0..NUM_ATTRS {
        for j in i + 1..NUM_ATTRS {
            for k in j + 1..NUM_ATTRS {
                out.push([i, j, k].map(|x| AttributeId::new(x).unwrap()));
            }
        }
    }
    out
}

fn combo_bits(c: &[AttributeId; PROFILE_LEN]) -> u8 {
    c.iter().fold(0, |m, a| m | (1 << a.index()))
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct WeightVector(pub [f64; NUM_ATTRS]);

#[derive(Debug, Clone, PartialEq)]
pub struct Population {
    pub members: Vec<Chromosome>,
    pub generation_index: u64,
}

/// Uniform ordered triple of distinct attributes (uniform set, uniform order).
pub fn random_profile(rng: &mut Rng) -> NpcProfile {
    let mut pool: [usize; NUM_ATTRS] = std::array::from_fn(|i| i);
    for i in 0..PROFILE_LEN {
        let j = rng.random_range(i..NUM_ATTRS);
        pool.swap(i, j);
    }
    NpcProfile::new([pool[0], pool[1], pool[2]]).expect("distinct by construction")
}

/// Uniformly random ordering of a chromosome's active attributes.
pub fn random_ordering(c: Chromosome, rng: &mut Rng) -> NpcProfile {
    let mut attrs = c.active().map(AttributeId::index);
    for i in (1..PROFILE_LEN).rev() {
        let j = rng.random_range(0..=i);
        attrs.swap(i, j);
    }
    NpcProfile::new(attrs).expect("chromosome genes are distinct")
}

pub fn init_population(params: &GaParams, rng: &mut Rng) -> Result<(Population, WeightVector), PcgError> {
    params.validate()?;
    let combos = all_combos();
    let members = (0..params.population_size)
        .map(|_| Chromosome(combo_bits(&combos[rng.random_range(0..NUM_COMBOS)])))
        .collect();
    Ok((Population { members, generation_index: 0 }, WeightVector::default()))
}

/// Per-attribute weight changes implied by one duel.
///
/// On a win, undestroyed NPC arguments, incorrect plays and unplayed cards
/// raise an attribute's weight and correct plays lower it. On a loss,
/// undestroyed arguments lower it and unplayed cards raise it.
pub fn weight_deltas(report: &DuelReport, params: &GaParams) -> [f64; NUM_ATTRS] {
    let d = params.delta;
    std::array::from_fn(|a| {
        let not_destroyed = f64::from(report.npc_args_not_destroyed[a]);
        let unplayed = f64::from(report.unplayed[a]);
        match report.outcome {
            Outcome::Win => {
                d * (not_destroyed + f64::from(report.played_incorrectly[a]) + unplayed)
                    - d * f64::from(report.played_correctly[a])
            }
            Outcome::Loss => -d * not_destroyed + d * unplayed,
        }
    })
}

pub fn apply_update(
    weights: &WeightVector,
    deltas: &[f64; NUM_ATTRS],
    version: PcgVersion,
    params: &GaParams,
) -> WeightVector {
    let mut w = *weights;
    match version {
        PcgVersion::V1Random => {}
        PcgVersion::V2Raw => {
            for (wi, di) in w.0.iter_mut().zip(deltas) {
                *wi += di;
            }
        }
        PcgVersion::V3Normalized => {
            let n = NUM_ATTRS as f64;
            let mean = deltas.iter().sum::<f64>() / n;
            let sigma = (deltas.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / n).sqrt();
            if sigma > SIGMA_EPS * mean.abs().max(1.0) {
                for (wi, di) in w.0.iter_mut().zip(deltas) {
                    *wi += params.v3_step * (di - mean) / sigma;
                }
            }
        }
    }
    w
}

pub fn fitness(c: Chromosome, weights: &WeightVector) -> f64 {
    c.active().iter().map(|a| weights.0[a.index()]).sum()
}

/// Indices of the top half by fitness; ties go to the lower index.
pub fn select_parents(pop: &Population, weights: &WeightVector) -> Vec<usize> {
    let scores: Vec<f64> = pop.members.iter().map(|&c| fitness(c, weights)).collect();
    let mut order: Vec<usize> = (0..pop.members.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order.truncate(pop.members.len() / 2);
    order
}

/// Single-point crossover: genes `0..cut` from one parent, `cut..7` from the other.
pub fn crossover(a: u8, b: u8, cut: usize) -> (u8, u8) {
    let low = (1u8 << cut) - 1;
    let high = !low & 0x7f;
    ((a & low) | (b & high), (b & low) | (a & high))
}

/// With probability `p`, flips one uniformly chosen gene.
pub fn mutate(bits: u8, p: f64, rng: &mut Rng) -> u8 {
    if p > 0.0 && rng.random::<f64>() < p {
        bits ^ (1 << rng.random_range(0..NUM_ATTRS))
    } else {
        bits
    }
}

/// Switches uniformly chosen genes off (or on) until exactly three are active.
pub fn repair(mut bits: u8, rng: &mut Rng) -> Chromosome {
    bits &= 0x7f;
    loop {
        let active = bits.count_ones() as usize;
        if active == PROFILE_LEN {
            return Chromosome(bits);
        }
        let want_on = active < PROFILE_LEN;
        let candidates: Vec<u8> =
            (0..NUM_ATTRS as u8).filter(|&i| ((bits >> i) & 1 == 1) != want_on).collect();
        let pick = candidates[rng.random_range(0..candidates.len())];
        bits ^= 1 << pick;
    }
}

pub fn next_generation(pop: &Population, weights: &WeightVector, params: &GaParams, rng: &mut Rng) -> Population {
    let parents = select_parents(pop, weights);
    let size = pop.members.len();
    let mut members = Vec::with_capacity(size);
    for _ in 0..size / 2 {
        let a = pop.members[parents[rng.random_range(0..parents.len())]];
        let b = pop.members[parents[rng.random_range(0..parents.len())]];
        let cut = rng.random_range(1..NUM_ATTRS);
        let (c1, c2) = crossover(a.bits(), b.bits(), cut);
        for child in [c1, c2] {
            let mutated = mutate(child, params.mutation_prob, rng);
            members.push(repair(mutated, rng));
        }
    }
    Population { members, generation_index: pop.generation_index + 1 }
}

pub fn sample_opponent(
    version: PcgVersion,
    population: Option<&Population>,
    rng: &mut Rng,
) -> Result<NpcProfile, PcgError> {
    if !version.uses_ga() {
        return Ok(random_profile(rng));
    }
    let pop = population.filter(|p| !p.members.is_empty()).ok_or(PcgError::EmptyPopulation)?;
    let c = pop.members[rng.random_range(0..pop.members.len())];
    Ok(random_ordering(c, rng))
}

/// Generator state owned by one training or evaluation run.
#[derive(Debug, Clone, PartialEq)]
pub struct PcgState {
    pub version: PcgVersion,
    pub params: GaParams,
    pub weights: WeightVector,
    /// `None` for version 1.
    pub population: Option<Population>,
}

impl PcgState {
    pub fn new(version: PcgVersion, params: GaParams, rng: &mut Rng) -> Result<Self, PcgError> {
        params.validate()?;
        let (population, weights) = if version.uses_ga() {
            let (p, w) = init_population(&params, rng)?;
            (Some(p), w)
        } else {
            (None, WeightVector::default())
        };
        Ok(Self { version, params, weights, population })
    }

    pub fn sample_opponent(&self, rng: &mut Rng) -> Result<NpcProfile, PcgError> {
        sample_opponent(self.version, self.population.as_ref(), rng)
    }

    /// Folds a finished duel into the weights and breeds the next generation.
    pub fn on_duel_end(&mut self, report: &DuelReport, rng: &mut Rng) {
        if !self.version.uses_ga() {
            return;
        }
        let d = weight_deltas(report, &self.params);
        self.weights = apply_update(&self.weights, &d, self.version, &self.params);
        if let Some(pop) = &self.population {
            self.population = Some(next_generation(pop, &self.weights, &self.params, rng));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeded_rng;

    fn report(outcome: Outcome) -> DuelReport {
        DuelReport {
            outcome,
            npc_args_not_destroyed: [0; 7],
            played_correctly: [0; 7],
            played_incorrectly: [0; 7],
            unplayed: [0; 7],
        }
    }

    #[test]
    fn version_parsing() {
        assert_eq!("2".parse::<PcgVersion>().unwrap(), PcgVersion::V2Raw);
        assert_eq!("v3".parse::<PcgVersion>().unwrap(), PcgVersion::V3Normalized);
        assert!("4".parse::<PcgVersion>().is_err());
        assert_eq!(PcgVersion::V1Random.to_string(), "v1");
    }

    #[test]
    fn params_validation() {
        assert!(GaParams::default().validate().is_ok());
        for bad in [
            GaParams { population_size: 5, ..Default::default() },
            GaParams { population_size: 2, ..Default::default() },
            GaParams { mutation_prob: 1.5, ..Default::default() },
            GaParams { delta: 0.0, ..Default::default() },
            GaParams { v3_step: -1.0, ..Default::default() },
        ] {
            assert!(bad.validate().is_err(), "{bad:?}");
        }
    }

    #[test]
    fn combos_are_lexicographic() {
        let c = all_combos();
        assert_eq!(c.len(), 35);
        assert_eq!(c[0].map(|a| a.index()), [0, 1, 2]);
        assert_eq!(c[34].map(|a| a.index()), [4, 5, 6]);
    }

    #[test]
    fn init_population_shape() {
        let mut rng = seeded_rng(1, 0);
        let (pop, w) = init_population(&GaParams::default(), &mut rng).unwrap();
        assert_eq!(pop.members.len(), 10);
        assert!(pop.members.iter().all(|c| c.bits().count_ones() == 3));
        assert_eq!(w.0, [0.0; 7]);
        let (again, _) = init_population(&GaParams::default(), &mut seeded_rng(1, 0)).unwrap();
        assert_eq!(pop, again);
    }

    #[test]
    fn win_deltas() {
        let mut r = report(Outcome::Win);
        r.played_correctly[3] = 2;
        let d = weight_deltas(&r, &GaParams::default());
        assert_eq!(d[3], -2.0);
        assert!(d.iter().enumerate().all(|(i, &v)| i == 3 || v == 0.0));
    }

    #[test]
    fn loss_deltas() {
        let mut r = report(Outcome::Loss);
        r.npc_args_not_destroyed[1] = 2;
        r.unplayed[1] = 1;
        r.played_correctly[1] = 4;
        r.played_incorrectly[1] = 3;
        assert_eq!(weight_deltas(&r, &GaParams::default())[1], -1.0);
        assert_eq!(weight_deltas(&report(Outcome::Loss), &GaParams::default()), [0.0; 7]);
    }

    #[test]
    fn v2_update_adds() {
        let p = GaParams::default();
        let w = apply_update(&WeightVector::default(), &[1.0, -2.0, 0.0, 0.0, 0.0, 0.0, 0.0], PcgVersion::V2Raw, &p);
        assert_eq!(w.0, [1.0, -2.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn v3_update_z_scores() {
        let p = GaParams::default();
        let w0 = WeightVector([0.5; 7]);
        assert_eq!(apply_update(&w0, &[3.0; 7], PcgVersion::V3Normalized, &p), w0);
        let w = apply_update(&WeightVector::default(), &[2.0, -2.0, 0.0, 0.0, 0.0, 0.0, 0.0], PcgVersion::V3Normalized, &p);
        let sigma = (8.0f64 / 7.0).sqrt();
        assert!((w.0[0] - 0.5 * 2.0 / sigma).abs() < 1e-15);
        assert!((w.0[0] - 0.9354143466934853).abs() < 1e-12);
        assert!((w.0[1] + w.0[0]).abs() < 1e-15);
    }

    #[test]
    fn fitness_sums_active_weights() {
        let c = Chromosome::from_gene_str("1110000").unwrap();
        assert_eq!(fitness(c, &WeightVector([1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0])), 6.0);
        assert_eq!(fitness(c, &WeightVector::default()), 0.0);
    }

    #[test]
    fn crossover_example() {
        let a = gene_str_bits("1110000").unwrap();
        let b = gene_str_bits("0001110").unwrap();
        let (c1, c2) = crossover(a, b, 3);
        assert_eq!(c1, gene_str_bits("1111110").unwrap());
        assert_eq!(c2, 0);
        let mut rng = seeded_rng(4, 0);
        let r1 = repair(c1, &mut rng);
        let r2 = repair(c2, &mut rng);
        assert_eq!(r1.bits().count_ones(), 3);
        assert_eq!(r1.bits() & !c1, 0, "repair only switches genes off when too many are on");
        assert_eq!(r2.bits().count_ones(), 3);
    }

    #[test]
    fn no_mutation_identical_parents() {
        let c = Chromosome::from_gene_str("0101010").unwrap();
        let pop = Population { members: vec![c; 10], generation_index: 3 };
        let p = GaParams { mutation_prob: 0.0, ..Default::default() };
        let next = next_generation(&pop, &WeightVector([1.0, -1.0, 0.5, 0.0, 2.0, 0.0, 0.0]), &p, &mut seeded_rng(8, 0));
        assert_eq!(next.members, vec![c; 10]);
        assert_eq!(next.generation_index, 4);
    }

    #[test]
    fn opponent_from_population() {
        let c = Chromosome::from_gene_str("0101010").unwrap();
        let pop = Population { members: vec![c; 10], generation_index: 0 };
        let mut rng = seeded_rng(2, 0);
        for _ in 0..50 {
            let p = sample_opponent(PcgVersion::V2Raw, Some(&pop), &mut rng).unwrap();
            assert_eq!(p.mask(), c.bits());
        }
        assert_eq!(sample_opponent(PcgVersion::V3Normalized, None, &mut rng), Err(PcgError::EmptyPopulation));
        assert!(sample_opponent(PcgVersion::V1Random, None, &mut rng).is_ok());
    }

    #[test]
    fn v1_duel_end_is_noop() {
        let mut rng = seeded_rng(0, 0);
        let mut s = PcgState::new(PcgVersion::V1Random, GaParams::default(), &mut rng).unwrap();
        let before = s.clone();
        let mut r = report(Outcome::Win);
        r.unplayed[2] = 5;
        s.on_duel_end(&r, &mut rng);
        assert_eq!(s, before);
    }

    #[test]
    fn v2_duel_end_applies_deltas() {
        let mut rng = seeded_rng(0, 0);
        let mut s = PcgState::new(PcgVersion::V2Raw, GaParams::default(), &mut rng).unwrap();
        let mut r = report(Outcome::Loss);
        r.npc_args_not_destroyed[4] = 2;
        r.unplayed[0] = 3;
        s.on_duel_end(&r, &mut rng);
        assert_eq!(s.weights.0, weight_deltas(&r, &s.params));
        assert_eq!(s.population.as_ref().unwrap().generation_index, 1);
    }
}
