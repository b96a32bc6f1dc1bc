//! Seed-replayable random perturbations.
//!
//! Every random value used by the optimizer is a pure function of a
//! [`SeedState`] `(run_seed, step, phase, lane)`. Nothing is drawn from a
//! mutable global stream, so a step's perturbation can be regenerated at any
//! time from its seed instead of being stored, and Monte Carlo lanes can be
//! evaluated in any order or on any number of workers.
//!
//! The Gaussian draw and the Bernoulli mask of one step live on distinct
//! phases, so changing the sampling probabilities never changes `z`.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, CurvzoError, Result};
use crate::problems::Partition;

/// Purpose of a random stream within one optimizer step.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Perturb,
    Mask,
    Batch,
    Oracle,
}

impl Phase {
    pub fn code(self) -> u64 {
        match self {
            Phase::Perturb => 0,
            Phase::Mask => 1,
            Phase::Batch => 2,
            Phase::Oracle => 3,
        }
    }

    pub fn from_code(code: u64) -> Option<Self> {
        match code {
            0 => Some(Phase::Perturb),
            1 => Some(Phase::Mask),
            2 => Some(Phase::Batch),
            3 => Some(Phase::Oracle),
            _ => None,
        }
    }
}

/// Key of one random stream.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct SeedState {
    pub run_seed: u64,
    pub step: u64,
    pub phase: Phase,
    pub lane: u64,
}

impl SeedState {
    pub fn new(run_seed: u64, step: u64, phase: Phase, lane: u64) -> Self {
        Self {
            run_seed,
            step,
            phase,
            lane,
        }
    }

    pub fn with_phase(self, phase: Phase) -> Self {
        Self { phase, ..self }
    }

    pub fn with_lane(self, lane: u64) -> Self {
        Self { lane, ..self }
    }

    /// Independent generator for this key.
    pub fn rng(&self) -> ChaCha8Rng {
        let mut state = splitmix64(self.run_seed ^ 0x243f_6a88_85a3_08d3);
        let mut seed = [0u8; 32];
        let words = [
            self.step,
            self.phase.code(),
            self.lane,
            0x1319_8a2e_0370_7344,
        ];
        for (chunk, word) in seed.chunks_exact_mut(8).zip(words) {
            state = splitmix64(state ^ word);
            chunk.copy_from_slice(&state.to_le_bytes());
        }
        ChaCha8Rng::from_seed(seed)
    }
}

// Four decimal integers: run_seed step phase lane.
impl fmt::Display for SeedState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {} {} {}",
            self.run_seed,
            self.step,
            self.phase.code(),
            self.lane
        )
    }
}

impl FromStr for SeedState {
    type Err = CurvzoError;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<u64> = s
            .split_whitespace()
            .map(|p| p.parse::<u64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| CurvzoError::invalid(format!("bad seed state `{s}`: {e}")))?;
        if parts.len() != 4 {
            return Err(CurvzoError::invalid(format!(
                "seed state needs four integers, got `{s}`"
            )));
        }
        let phase = Phase::from_code(parts[2])
            .ok_or_else(|| CurvzoError::invalid(format!("unknown phase code {}", parts[2])))?;
        Ok(SeedState::new(parts[0], parts[1], phase, parts[3]))
    }
}

impl Serialize for SeedState {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for SeedState {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// `d` standard-normal variates keyed by `seed`.
pub fn sample_gaussian(seed: SeedState, d: usize) -> Vec<f64> {
    let mut rng = seed.rng();
    (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

fn check_probabilities(pi: &[f64]) -> Result<()> {
    match pi.iter().position(|p| !(0.0..=1.0).contains(p)) {
        Some(i) => Err(CurvzoError::invalid(format!(
            "probability pi[{i}] = {} outside [0, 1]",
            pi[i]
        ))),
        None => Ok(()),
    }
}

/// Independent Bernoulli draws `m_i ~ Bernoulli(pi_i)`.
pub fn sample_mask(seed: SeedState, pi: &[f64]) -> Result<Vec<bool>> {
    check_probabilities(pi)?;
    let mut rng = seed.rng();
    Ok(pi.iter().map(|&p| rng.gen::<f64>() < p).collect())
}

/// One Bernoulli draw per block, broadcast to every coordinate of the block.
///
/// Draws are consumed in block order from the mask stream, so singleton
/// blocks reproduce [`sample_mask`] exactly.
pub fn block_mask(seed: SeedState, pi_blk: &[f64], partition: &Partition) -> Result<Vec<bool>> {
    check_len(partition.num_blocks(), pi_blk.len())?;
    let blocks = sample_mask(seed, pi_blk)?;
    let mut mask = vec![false; partition.dim()];
    for (range, &on) in partition.ranges().iter().zip(&blocks) {
        mask[range.clone()].fill(on);
    }
    Ok(mask)
}

/// A sparse direction `v = m ⊙ z` together with its factors.
#[derive(Clone, Debug, PartialEq)]
pub struct SparsePerturbation {
    pub z: Vec<f64>,
    pub mask: Vec<bool>,
    pub v: Vec<f64>,
    /// Seed of the Gaussian draw; the mask lives on the same key with
    /// [`Phase::Mask`].
    pub seed: Option<SeedState>,
}

impl SparsePerturbation {
    pub fn dim(&self) -> usize {
        self.v.len()
    }

    pub fn is_dense(&self) -> bool {
        self.mask.iter().all(|&m| m)
    }

    pub fn is_empty(&self) -> bool {
        !self.mask.iter().any(|&m| m)
    }

    /// Indices with `m_i = 1`.
    pub fn support(&self) -> impl Iterator<Item = usize> + '_ {
        self.mask
            .iter()
            .enumerate()
            .filter_map(|(i, &m)| m.then_some(i))
    }

    pub fn selected_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }
}

/// Elementwise product of a mask and a Gaussian draw.
pub fn compose(mask: Vec<bool>, z: Vec<f64>) -> Result<SparsePerturbation> {
    check_len(z.len(), mask.len())?;
    let v = mask
        .iter()
        .zip(&z)
        .map(|(&m, &zi)| if m { zi } else { 0.0 })
        .collect();
    Ok(SparsePerturbation {
        z,
        mask,
        v,
        seed: None,
    })
}

/// Dense perturbation (`m` all ones) keyed by `seed`.
pub fn dense(seed: SeedState, d: usize) -> SparsePerturbation {
    let z = sample_gaussian(seed.with_phase(Phase::Perturb), d);
    let mut p = compose(vec![true; d], z).expect("lengths agree");
    p.seed = Some(seed.with_phase(Phase::Perturb));
    p
}

/// How the mask of a perturbation is drawn.
#[derive(Clone, Copy, Debug)]
pub enum MaskSpec<'a> {
    Coordinate(&'a [f64]),
    Block {
        pi_blk: &'a [f64],
        partition: &'a Partition,
    },
}

/// Regenerates a step's perturbation from its seed.
///
/// The Gaussian draw uses `seed` with [`Phase::Perturb`] and the mask uses
/// the same key with [`Phase::Mask`]; the phase carried by `seed` is ignored.
pub fn replay(seed: SeedState, spec: MaskSpec<'_>, d: usize) -> Result<SparsePerturbation> {
    let z_seed = seed.with_phase(Phase::Perturb);
    let m_seed = seed.with_phase(Phase::Mask);
    let mask = match spec {
        MaskSpec::Coordinate(pi) => {
            check_len(d, pi.len())?;
            sample_mask(m_seed, pi)?
        }
        MaskSpec::Block { pi_blk, partition } => {
            check_len(d, partition.dim())?;
            block_mask(m_seed, pi_blk, partition)?
        }
    };
    let z = sample_gaussian(z_seed, d);
    let mut p = compose(mask, z)?;
    p.seed = Some(z_seed);
    Ok(p)
}
