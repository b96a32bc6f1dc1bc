//! Online curvature scores tracked from `(Δ, v)` alone.
//!
//! The raw score `s_i = Δ² v_i²` has expectation
//! `π_i Σ_j π_j g_j² + π_i (3 − π_i) g_i² + O(ε²)`: a term shared by all
//! coordinates plus a per-coordinate `g_i²` signal, which is the single-sample
//! diagonal Fisher. The optimizer smooths the energy-normalized score with an
//! EMA and derives the sampling distribution and budget from the result.

use serde::{Deserialize, Serialize};

use crate::error::{check_len, CurvzoError, Result};
use crate::estimator::Response;
use crate::perturbation::SparsePerturbation;
use crate::problems::Partition;

pub const DEFAULT_BETA: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreMode {
    Coordinate,
    Block,
}

/// EMA-smoothed scores, one per coordinate or per block.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvatureScores {
    pub values: Vec<f64>,
    pub beta: f64,
    pub step_count: u64,
    pub mode: ScoreMode,
}

impl CurvatureScores {
    /// Uniform start `S⁰ = 1/n`.
    pub fn uniform(n: usize, beta: f64, mode: ScoreMode) -> Result<Self> {
        if n == 0 {
            return Err(CurvzoError::invalid("score vector must be non-empty"));
        }
        if !(beta > 0.0 && beta <= 1.0) {
            return Err(CurvzoError::invalid(format!(
                "EMA decay must lie in (0, 1], got {beta}"
            )));
        }
        Ok(Self {
            values: vec![1.0 / n as f64; n],
            beta,
            step_count: 0,
            mode,
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// `S ← (1 − β) S + β s̃` elementwise.
    pub fn ema_update(&mut self, observation: &[f64]) -> Result<()> {
        self.check_observation(observation)?;
        let beta = self.beta;
        for (s, o) in self.values.iter_mut().zip(observation) {
            *s = (1.0 - beta) * *s + beta * o;
        }
        self.step_count += 1;
        Ok(())
    }

    /// EMA update restricted to `selected` entries; the rest hold their value.
    pub fn ema_update_selected(&mut self, observation: &[f64], selected: &[bool]) -> Result<()> {
        self.check_observation(observation)?;
        check_len(self.values.len(), selected.len())?;
        let beta = self.beta;
        for ((s, o), &on) in self.values.iter_mut().zip(observation).zip(selected) {
            if on {
                *s = (1.0 - beta) * *s + beta * o;
            }
        }
        self.step_count += 1;
        Ok(())
    }

    fn check_observation(&self, observation: &[f64]) -> Result<()> {
        check_len(self.values.len(), observation.len())?;
        if let Some(i) = observation.iter().position(|o| !(*o >= 0.0) || !o.is_finite()) {
            return Err(CurvzoError::invalid(format!(
                "score observation {i} = {} must be finite and nonnegative",
                observation[i]
            )));
        }
        Ok(())
    }

    pub fn stats(&self) -> ScoreStats {
        score_stats(&self.values)
    }
}

/// `s_i = Δ² v_i²`.
pub fn raw_score(response: &Response, pert: &SparsePerturbation) -> Vec<f64> {
    let d2 = response.delta * response.delta;
    pert.v.iter().map(|v| d2 * v * v).collect()
}

/// `s̃_i = (v_i² / Σ_j v_j²) Δ²`; `None` when `v = 0` (the update is skipped).
pub fn normalized_score(response: &Response, pert: &SparsePerturbation) -> Option<Vec<f64>> {
    let energy: f64 = pert.v.iter().map(|v| v * v).sum();
    if energy == 0.0 {
        return None;
    }
    let d2 = response.delta * response.delta;
    Some(pert.v.iter().map(|v| (v * v / energy) * d2).collect())
}

/// `s′_i = (s_i − π_i Δ²) / (π_i (3 − π_i))`, unbiased for `g_i²`.
///
/// Diagnostic only: its variance grows like `1/π_i`.
pub fn unbiased_variant_score(
    response: &Response,
    pert: &SparsePerturbation,
    pi: &[f64],
) -> Result<Vec<f64>> {
    check_len(pert.dim(), pi.len())?;
    if let Some(i) = pi.iter().position(|&p| !(p > 0.0 && p < 3.0)) {
        return Err(CurvzoError::invalid(format!(
            "unbiased score needs 0 < pi < 3, pi[{i}] = {}",
            pi[i]
        )));
    }
    let d2 = response.delta * response.delta;
    Ok(raw_score(response, pert)
        .into_iter()
        .zip(pi)
        .map(|(s, &p)| (s - p * d2) / (p * (3.0 - p)))
        .collect())
}

/// `s̃_blk,k = (‖v_Gk‖² / ‖v‖²) Δ²`; `None` when `v = 0`.
pub fn block_score(
    response: &Response,
    pert: &SparsePerturbation,
    partition: &Partition,
) -> Result<Option<Vec<f64>>> {
    check_len(pert.dim(), partition.dim())?;
    let energy: f64 = pert.v.iter().map(|v| v * v).sum();
    if energy == 0.0 {
        return Ok(None);
    }
    let d2 = response.delta * response.delta;
    Ok(Some(
        partition
            .ranges()
            .iter()
            .map(|r| {
                let block: f64 = pert.v[r.clone()].iter().map(|v| v * v).sum();
                (block / energy) * d2
            })
            .collect(),
    ))
}

/// Distribution statistics of a score vector.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreStats {
    /// `(Σ√S)² / ΣS`, in `[1, n]`.
    pub d_eff: f64,
    /// Entropy of `p_i ∝ √S_i` divided by `ln n`, in `[0, 1]`.
    pub entropy: f64,
    pub n: usize,
}

/// Effective support and normalized entropy; an all-zero `S` counts as uniform.
pub fn score_stats(scores: &[f64]) -> ScoreStats {
    let n = scores.len();
    let root_sum: f64 = scores.iter().map(|s| s.sqrt()).sum();
    let sum: f64 = scores.iter().sum();
    if n == 0 || !(sum > 0.0) {
        return ScoreStats {
            d_eff: n as f64,
            entropy: 1.0,
            n,
        };
    }
    let d_eff = (root_sum * root_sum / sum).clamp(1.0, n as f64);
    let entropy = if n == 1 {
        1.0
    } else {
        let h: f64 = scores
            .iter()
            .map(|s| {
                let p = s.sqrt() / root_sum;
                if p > 0.0 {
                    -p * p.ln()
                } else {
                    0.0
                }
            })
            .sum();
        (h / (n as f64).ln()).clamp(0.0, 1.0)
    };
    ScoreStats { d_eff, entropy, n }
}
