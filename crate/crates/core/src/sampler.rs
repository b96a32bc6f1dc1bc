//! Variance-minimizing sampling probabilities and the adaptive budget.
//!
//! The Horvitz–Thompson estimator has per-coordinate variance of order
//! `F_ii / π_i`, so the sampler solves
//!
//! ```text
//! minimize Σ S_i / π_i   subject to   Σ π_i = B,   floor ≤ π_i ≤ 1
//! ```
//!
//! with the smoothed scores `S` plugged in for `F`. The KKT conditions give
//! `π_i = clamp(c √S_i, floor, 1)` for a single water level `c`, which is
//! found exactly by walking the sorted breakpoints of the piecewise-linear
//! budget function `c ↦ Σ clamp(c √S_i, floor, 1)`.

use serde::{Deserialize, Serialize};

use crate::curvature::ScoreStats;
use crate::error::{check_len, CurvzoError, Result};

pub const DEFAULT_FLOOR_COORDINATE: f64 = 1e-4;
pub const DEFAULT_FLOOR_BLOCK: f64 = 1e-3;

/// How probabilities above one are handled.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClipRule {
    /// Pin at one and hand the excess to the remaining coordinates.
    #[default]
    WaterFilling,
    /// Clip proportional probabilities once; `Σπ` may fall short of `B`.
    OneShot,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplingPlan {
    pub pi: Vec<f64>,
    pub budget: f64,
    pub floor: f64,
    /// Indices pinned at one.
    pub clipped: Vec<usize>,
    /// Indices pinned at the floor.
    pub floored: Vec<usize>,
    /// Water level `c` with `π_i = c √S_i` on the free set; zero when the
    /// plan is uniform by construction.
    pub level: f64,
}

impl SamplingPlan {
    pub fn uniform(n: usize, budget: f64) -> Self {
        Self {
            pi: vec![budget / n as f64; n],
            budget,
            floor: 0.0,
            clipped: Vec::new(),
            floored: Vec::new(),
            level: 0.0,
        }
    }
}

fn check_feasible(n: usize, budget: f64, floor: f64) -> Result<()> {
    let infeasible = || CurvzoError::InfeasibleBudget { budget, n, floor };
    if n == 0 {
        return Err(CurvzoError::invalid("cannot sample from an empty score vector"));
    }
    if !(0.0..1.0).contains(&floor) {
        return Err(CurvzoError::invalid(format!("floor must lie in [0, 1), got {floor}")));
    }
    if !budget.is_finite() || budget <= 0.0 || budget > n as f64 * (1.0 + 1e-12) {
        return Err(infeasible());
    }
    if budget < n as f64 * floor {
        return Err(infeasible());
    }
    Ok(())
}

/// Solves the budgeted variance-minimization problem for scores `scores`.
pub fn variance_minimizing_pi(
    scores: &[f64],
    budget: f64,
    floor: f64,
    rule: ClipRule,
) -> Result<SamplingPlan> {
    let n = scores.len();
    check_feasible(n, budget, floor)?;
    if let Some(i) = scores.iter().position(|s| !(*s >= 0.0) || !s.is_finite()) {
        return Err(CurvzoError::invalid(format!(
            "score {i} = {} must be finite and nonnegative",
            scores[i]
        )));
    }
    let budget = budget.min(n as f64);

    if budget == n as f64 {
        return Ok(SamplingPlan {
            pi: vec![1.0; n],
            budget,
            floor,
            clipped: (0..n).collect(),
            floored: Vec::new(),
            level: f64::INFINITY,
        });
    }
    if scores.iter().all(|&s| s == scores[0]) {
        return Ok(SamplingPlan {
            floor,
            ..SamplingPlan::uniform(n, budget)
        });
    }

    let roots: Vec<f64> = scores.iter().map(|s| s.sqrt()).collect();
    match rule {
        ClipRule::WaterFilling => water_fill(&roots, budget, floor),
        ClipRule::OneShot => Ok(one_shot(&roots, budget, floor)),
    }
}

fn one_shot(roots: &[f64], budget: f64, floor: f64) -> SamplingPlan {
    let total: f64 = roots.iter().sum();
    let level = budget / total;
    let mut plan = SamplingPlan {
        pi: Vec::with_capacity(roots.len()),
        budget,
        floor,
        clipped: Vec::new(),
        floored: Vec::new(),
        level,
    };
    for (i, r) in roots.iter().enumerate() {
        let x = level * r;
        plan.pi.push(if x >= 1.0 {
            plan.clipped.push(i);
            1.0
        } else if x <= floor {
            plan.floored.push(i);
            floor
        } else {
            x
        });
    }
    plan
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Region {
    Floor,
    Free,
    Top,
}

fn water_fill(roots: &[f64], budget: f64, floor: f64) -> Result<SamplingPlan> {
    let n = roots.len();
    let positive: Vec<usize> = (0..n).filter(|&i| roots[i] > 0.0).collect();
    let zeros = n - positive.len();

    // Every positive-score index at one still leaves budget: the zero-score
    // indices share the remainder, which does not affect the objective.
    if budget >= positive.len() as f64 + floor * zeros as f64 {
        let share = if zeros > 0 {
            ((budget - positive.len() as f64) / zeros as f64).max(floor)
        } else {
            1.0
        };
        let pi = (0..n)
            .map(|i| if roots[i] > 0.0 { 1.0 } else { share })
            .collect();
        return Ok(SamplingPlan {
            pi,
            budget,
            floor,
            clipped: positive,
            floored: Vec::new(),
            level: f64::INFINITY,
        });
    }

    let level = find_level(roots, &positive, zeros, budget, floor);
    let mut region: Vec<Region> = roots
        .iter()
        .map(|&r| classify(level * r, r, floor))
        .collect();

    // Re-derive the level from the final classification so Σπ = B up to
    // rounding; repeat if a boundary index changes side.
    let mut level = level;
    for _ in 0..n + 1 {
        let fixed: f64 = region
            .iter()
            .map(|g| match g {
                Region::Floor => floor,
                Region::Top => 1.0,
                Region::Free => 0.0,
            })
            .sum();
        let free_roots: f64 = roots
            .iter()
            .zip(&region)
            .filter(|(_, g)| **g == Region::Free)
            .map(|(r, _)| r)
            .sum();
        if free_roots == 0.0 {
            break;
        }
        level = (budget - fixed) / free_roots;
        let mut changed = false;
        for (i, g) in region.iter_mut().enumerate() {
            if *g == Region::Free {
                let next = classify(level * roots[i], roots[i], floor);
                if next != Region::Free {
                    *g = next;
                    changed = true;
                }
            }
        }
        if !changed {
            break;
        }
    }

    let mut plan = SamplingPlan {
        pi: Vec::with_capacity(n),
        budget,
        floor,
        clipped: Vec::new(),
        floored: Vec::new(),
        level,
    };
    for (i, g) in region.iter().enumerate() {
        plan.pi.push(match g {
            Region::Top => {
                plan.clipped.push(i);
                1.0
            }
            Region::Floor => {
                plan.floored.push(i);
                floor
            }
            Region::Free => level * roots[i],
        });
    }
    Ok(plan)
}

fn classify(x: f64, root: f64, floor: f64) -> Region {
    if root == 0.0 || x <= floor {
        Region::Floor
    } else if x >= 1.0 {
        Region::Top
    } else {
        Region::Free
    }
}

/// Smallest `c` with `Σ clamp(c r_i, floor, 1) + floor·zeros = budget`.
fn find_level(roots: &[f64], positive: &[usize], zeros: usize, budget: f64, floor: f64) -> f64 {
    // (breakpoint, root, is_top)
    let mut events: Vec<(f64, f64, bool)> = Vec::with_capacity(2 * positive.len());
    for &i in positive {
        let r = roots[i];
        events.push((floor / r, r, false));
        events.push((1.0 / r, r, true));
    }
    events.sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then(a.2.cmp(&b.2)));

    let mut at_floor = positive.len() + zeros;
    let mut at_top = 0usize;
    let mut free_roots = 0.0;
    let mut prev = 0.0;
    for &(c, r, is_top) in &events {
        let value = floor * at_floor as f64 + c * free_roots + at_top as f64;
        if value >= budget && free_roots > 0.0 {
            return (budget - floor * at_floor as f64 - at_top as f64) / free_roots;
        }
        prev = c;
        if is_top {
            free_roots -= r;
            at_top += 1;
        } else {
            free_roots += r;
            at_floor -= 1;
        }
    }
    prev
}

/// `Σ F_i / π_i`.
pub fn total_variance_objective(fisher: &[f64], pi: &[f64]) -> Result<f64> {
    check_len(fisher.len(), pi.len())?;
    if let Some(i) = pi.iter().position(|&p| !(p > 0.0)) {
        return Err(CurvzoError::invalid(format!(
            "objective needs pi > 0, pi[{i}] = {}",
            pi[i]
        )));
    }
    Ok(fisher.iter().zip(pi).map(|(f, p)| f / p).sum())
}

/// Bounds and trade-off weight of the adaptive budget.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BudgetPolicy {
    pub b_min: f64,
    pub b_max: f64,
    pub alpha: f64,
}

impl BudgetPolicy {
    /// `B_min = max(1, 0.05 n)`, `B_max = 0.9 n`, `α = 0.5`.
    pub fn default_for(n: usize) -> Self {
        let n = n as f64;
        let b_min = (0.05 * n).max(1.0);
        Self {
            b_min,
            b_max: (0.9 * n).max(b_min),
            alpha: 0.5,
        }
    }

    /// Both bounds pinned at `budget`.
    pub fn fixed(budget: f64) -> Self {
        Self {
            b_min: budget,
            b_max: budget,
            alpha: 0.5,
        }
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        if !(self.b_min >= 1.0 || (n as f64) < 1.0) || !self.b_min.is_finite() {
            return Err(CurvzoError::invalid(format!("b_min must be >= 1, got {}", self.b_min)));
        }
        if !(self.b_max <= n as f64) {
            return Err(CurvzoError::invalid(format!(
                "b_max = {} exceeds n = {n}",
                self.b_max
            )));
        }
        if self.b_min > self.b_max {
            return Err(CurvzoError::invalid(format!(
                "b_min = {} exceeds b_max = {}",
                self.b_min, self.b_max
            )));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(CurvzoError::invalid(format!("alpha must lie in [0, 1], got {}", self.alpha)));
        }
        Ok(())
    }
}

/// `B = B_min + (B_max − B_min)(α d_eff/n + (1 − α) H)`.
pub fn adaptive_budget(policy: &BudgetPolicy, stats: &ScoreStats) -> f64 {
    let spread = policy.alpha * stats.d_eff / stats.n as f64 + (1.0 - policy.alpha) * stats.entropy;
    let b = policy.b_min + (policy.b_max - policy.b_min) * spread;
    b.clamp(policy.b_min, policy.b_max)
}
