//! Independent verifiers for the estimator, score and sampler contracts.
//!
//! Monte Carlo reports draw lane `k` from `(seed, 0, phase, k)` and reduce
//! fixed-size chunks of lanes in lane order, then merge chunk summaries in a
//! fixed pairwise tree. The result is bit-identical for any worker count.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::curvature::{raw_score, unbiased_variant_score};
use crate::error::{check_len, CurvzoError, Result};
use crate::estimator::{
    block_ht, dense_spsa, ht_sparse, naive_sparse, two_point_response, Response,
};
use crate::perturbation::{self, MaskSpec, Phase, SeedState};
use crate::problems::{Minibatch, Partition, Problem};

const CHUNK: usize = 4096;

/// Per-coordinate Monte Carlo summary compared against target values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentReport {
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
    /// `sample_std / √N`.
    pub std_err: Vec<f64>,
    pub samples: u64,
    pub target: Vec<f64>,
    pub z_scores: Vec<f64>,
    pub max_abs_z: f64,
}

impl MomentReport {
    fn new(summary: Summary, target: Vec<f64>) -> Self {
        let n = summary.count as f64;
        let variance: Vec<f64> = summary.m2.iter().map(|m| m / (n - 1.0)).collect();
        let std_err: Vec<f64> = variance.iter().map(|v| (v / n).sqrt()).collect();
        let z_scores: Vec<f64> = summary
            .mean
            .iter()
            .zip(&target)
            .zip(&std_err)
            .map(|((m, t), se)| {
                let diff = m - t;
                if *se > 0.0 {
                    diff / se
                } else if diff == 0.0 {
                    0.0
                } else {
                    f64::INFINITY.copysign(diff)
                }
            })
            .collect();
        let max_abs_z = z_scores.iter().fold(0.0f64, |a, z| a.max(z.abs()));
        Self {
            mean: summary.mean,
            variance,
            std_err,
            samples: summary.count,
            target,
            z_scores,
            max_abs_z,
        }
    }

    pub fn passes(&self, threshold: f64) -> bool {
        self.max_abs_z < threshold
    }
}

/// Count, mean and centered sum of squares of a vector statistic.
#[derive(Clone, Debug)]
struct Summary {
    count: u64,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl Summary {
    fn empty(d: usize) -> Self {
        Self {
            count: 0,
            mean: vec![0.0; d],
            m2: vec![0.0; d],
        }
    }

    fn push(&mut self, x: &[f64]) {
        self.count += 1;
        let n = self.count as f64;
        for ((m, s), &x) in self.mean.iter_mut().zip(&mut self.m2).zip(x) {
            let d = x - *m;
            *m += d / n;
            *s += d * (x - *m);
        }
    }

    // Chan et al. pairwise merge
    fn merge(a: Summary, b: Summary) -> Summary {
        if a.count == 0 {
            return b;
        }
        if b.count == 0 {
            return a;
        }
        let (na, nb) = (a.count as f64, b.count as f64);
        let n = na + nb;
        let mut out = Summary::empty(a.mean.len());
        out.count = a.count + b.count;
        for i in 0..a.mean.len() {
            let d = b.mean[i] - a.mean[i];
            out.mean[i] = a.mean[i] + d * nb / n;
            out.m2[i] = a.m2[i] + b.m2[i] + d * d * na * nb / n;
        }
        out
    }
}

fn tree_reduce(mut parts: Vec<Summary>, d: usize) -> Summary {
    if parts.is_empty() {
        return Summary::empty(d);
    }
    while parts.len() > 1 {
        let mut next = Vec::with_capacity(parts.len().div_ceil(2));
        let mut it = parts.into_iter();
        while let Some(a) = it.next() {
            next.push(match it.next() {
                Some(b) => Summary::merge(a, b),
                None => a,
            });
        }
        parts = next;
    }
    parts.pop().expect("one part left")
}

/// Runs `sample(lane)` for lanes `0..n` and summarizes each output coordinate.
fn monte_carlo<F>(n: u64, d: usize, sample: F) -> Result<Summary>
where
    F: Fn(u64) -> Result<Vec<f64>> + Sync,
{
    let chunks = (n as usize).div_ceil(CHUNK);
    let parts: Vec<Summary> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let start = (c * CHUNK) as u64;
            let end = (start + CHUNK as u64).min(n);
            let mut s = Summary::empty(d);
            for lane in start..end {
                s.push(&sample(lane)?);
            }
            Ok(s)
        })
        .collect::<Result<_>>()?;
    Ok(tree_reduce(parts, d))
}

fn check_sample_count(n: u64) -> Result<()> {
    if n < 2 {
        return Err(CurvzoError::invalid("Monte Carlo needs at least two samples"));
    }
    Ok(())
}

/// `E[s_i] = π_i Σ_j π_j g_j² + π_i (3 − π_i) g_i²`.
pub fn closed_form_score_expectation(g: &[f64], pi: &[f64]) -> Result<Vec<f64>> {
    check_len(g.len(), pi.len())?;
    let shared: f64 = g.iter().zip(pi).map(|(g, p)| p * g * g).sum();
    Ok(g.iter()
        .zip(pi)
        .map(|(g, p)| p * shared + p * (3.0 - p) * g * g)
        .collect())
}

/// `E[s_i]` by enumerating every mask pattern and substituting the Gaussian
/// moments `E[z²] = 1`, `E[z⁴] = 3` term by term in `(Σ_j g_j v_j)² v_i²`.
pub fn enumerate_score_expectation(g: &[f64], pi: &[f64]) -> Result<Vec<f64>> {
    check_len(g.len(), pi.len())?;
    let d = g.len();
    if d > 16 {
        return Err(CurvzoError::invalid("enumeration limited to d <= 16"));
    }
    // E[z_j z_k z_i²] for independent standard normals
    let gauss = |j: usize, k: usize, i: usize| -> f64 {
        match (j == k, j == i) {
            (true, true) => 3.0,
            (true, false) => 1.0,
            _ => 0.0,
        }
    };
    let mut out = vec![0.0; d];
    for pattern in 0u32..(1 << d) {
        let on = |i: usize| pattern >> i & 1 == 1;
        let prob: f64 = (0..d)
            .map(|i| if on(i) { pi[i] } else { 1.0 - pi[i] })
            .product();
        if prob == 0.0 {
            continue;
        }
        for (i, o) in out.iter_mut().enumerate() {
            if !on(i) {
                continue;
            }
            let mut e = 0.0;
            for j in (0..d).filter(|&j| on(j)) {
                for k in (0..d).filter(|&k| on(k)) {
                    e += g[j] * g[k] * gauss(j, k, i);
                }
            }
            *o += prob * e;
        }
    }
    Ok(out)
}

/// `E[g̃_i²] = (3 g_i² + Σ_{j≠i} π_j g_j²) / π_i` for the Horvitz–Thompson
/// estimate under a linear response.
pub fn ht_second_moment(g: &[f64], pi: &[f64]) -> Result<Vec<f64>> {
    check_len(g.len(), pi.len())?;
    let shared: f64 = g.iter().zip(pi).map(|(g, p)| p * g * g).sum();
    Ok(g.iter()
        .zip(pi)
        .map(|(g, p)| (3.0 * g * g + shared - p * g * g) / p)
        .collect())
}

/// Estimator whose moments are checked.
#[derive(Clone, Debug, PartialEq)]
pub enum EstimatorKind {
    Dense,
    Naive,
    Ht,
    /// `pi` is per block.
    Block(Partition),
}

/// Monte Carlo mean of an estimator against its target: the exact gradient
/// for the unbiased kinds, `diag(π) g` for the naive one.
pub fn mc_estimator_moments(
    problem: &Problem,
    params: &[f64],
    pi: &[f64],
    eps: f64,
    n: u64,
    seed: u64,
    kind: &EstimatorKind,
) -> Result<MomentReport> {
    check_sample_count(n)?;
    let d = problem.dim();
    check_len(d, params.len())?;
    let g = problem.exact_gradient(params, &Minibatch::Full)?;
    let target = match kind {
        EstimatorKind::Naive => {
            check_len(d, pi.len())?;
            g.iter().zip(pi).map(|(g, p)| g * p).collect()
        }
        _ => g,
    };
    let summary = monte_carlo(n, d, |lane| {
        let key = SeedState::new(seed, 0, Phase::Perturb, lane);
        let pert = match kind {
            EstimatorKind::Dense => perturbation::dense(key, d),
            EstimatorKind::Naive | EstimatorKind::Ht => {
                perturbation::replay(key, MaskSpec::Coordinate(pi), d)?
            }
            EstimatorKind::Block(partition) => perturbation::replay(
                key,
                MaskSpec::Block {
                    pi_blk: pi,
                    partition,
                },
                d,
            )?,
        };
        let mut w = params.to_vec();
        let r = two_point_response(problem, &mut w, &pert.v, eps, &Minibatch::Full)?;
        Ok(match kind {
            EstimatorKind::Dense => dense_spsa(&r, &pert)?.values,
            EstimatorKind::Naive => naive_sparse(&r, &pert).values,
            EstimatorKind::Ht => ht_sparse(&r, &pert, pi)?.values,
            EstimatorKind::Block(partition) => block_ht(&r, &pert, pi, partition)?.values,
        })
    })?;
    Ok(MomentReport::new(summary, target))
}

fn linear_response(g: &[f64], v: &[f64]) -> Response {
    Response {
        delta: g.iter().zip(v).map(|(g, v)| g * v).sum(),
        epsilon: 0.0,
        loss_plus: 0.0,
        loss_minus: 0.0,
    }
}

/// Monte Carlo `E[g̃_i²]` of the Horvitz–Thompson estimate with `Δ = gᵀv`.
pub fn mc_ht_second_moment(g: &[f64], pi: &[f64], n: u64, seed: u64) -> Result<MomentReport> {
    check_sample_count(n)?;
    let d = g.len();
    let target = ht_second_moment(g, pi)?;
    let summary = monte_carlo(n, d, |lane| {
        let key = SeedState::new(seed, 0, Phase::Perturb, lane);
        let pert = perturbation::replay(key, MaskSpec::Coordinate(pi), d)?;
        let r = linear_response(g, &pert.v);
        Ok(ht_sparse(&r, &pert, pi)?
            .values
            .into_iter()
            .map(|x| x * x)
            .collect())
    })?;
    Ok(MomentReport::new(summary, target))
}

/// Moments of the raw score and its unbiased variant under `Δ = gᵀv`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreMomentReport {
    /// Target: the closed-form expectation.
    pub raw: MomentReport,
    /// Target: `g_i²`.
    pub variant: MomentReport,
}

pub fn mc_score_moments(g: &[f64], pi: &[f64], n: u64, seed: u64) -> Result<ScoreMomentReport> {
    check_sample_count(n)?;
    let d = g.len();
    let raw_target = closed_form_score_expectation(g, pi)?;
    let variant_ok = pi.iter().all(|&p| p > 0.0 && p < 3.0);
    let summary = monte_carlo(n, 2 * d, |lane| {
        let key = SeedState::new(seed, 0, Phase::Perturb, lane);
        let pert = perturbation::replay(key, MaskSpec::Coordinate(pi), d)?;
        let r = linear_response(g, &pert.v);
        let mut out = raw_score(&r, &pert);
        if variant_ok {
            out.extend(unbiased_variant_score(&r, &pert, pi)?);
        } else {
            out.extend(std::iter::repeat_n(f64::NAN, d));
        }
        Ok(out)
    })?;
    let split = |s: &Summary, lo: usize| Summary {
        count: s.count,
        mean: s.mean[lo..lo + d].to_vec(),
        m2: s.m2[lo..lo + d].to_vec(),
    };
    Ok(ScoreMomentReport {
        raw: MomentReport::new(split(&summary, 0), raw_target),
        variant: MomentReport::new(split(&summary, d), g.iter().map(|g| g * g).collect()),
    })
}

/// Grid search for `argmin Σ S_i/π_i` on `Σπ = B`, `π ∈ (0, 1]`, `n ≤ 4`.
///
/// The first `n − 1` coordinates range over multiples of `grid`; the last
/// absorbs the remaining budget. Grids with more than ~10⁷ points are
/// searched coarse-to-fine (the objective is convex on the feasible slice).
pub fn brute_force_p1(scores: &[f64], budget: f64, grid: f64) -> Result<Vec<f64>> {
    let n = scores.len();
    if n == 0 || n > 4 {
        return Err(CurvzoError::invalid("brute force supports 1 <= n <= 4"));
    }
    if !(grid > 0.0 && grid <= 0.001) {
        return Err(CurvzoError::invalid(format!("grid must lie in (0, 0.001], got {grid}")));
    }
    if !(budget > 0.0 && budget <= n as f64) {
        return Err(CurvzoError::InfeasibleBudget {
            budget,
            n,
            floor: 0.0,
        });
    }
    if n == 1 {
        return Ok(vec![budget]);
    }
    let steps = (1.0 / grid).round() as i64;
    let lo = vec![1i64; n - 1];
    let hi = vec![steps; n - 1];
    let best = search_grid(scores, budget, grid, steps, &lo, &hi)
        .ok_or(CurvzoError::InfeasibleBudget {
            budget,
            n,
            floor: 0.0,
        })?;
    Ok(point(&best, budget, grid))
}

fn point(ix: &[i64], budget: f64, grid: f64) -> Vec<f64> {
    let mut p: Vec<f64> = ix.iter().map(|&k| k as f64 * grid).collect();
    let last = budget - p.iter().sum::<f64>();
    p.push(last);
    p
}

/// Best grid index vector in the box `lo..=hi` (inclusive), refined
/// coarse-to-fine when the box is large.
fn search_grid(s: &[f64], budget: f64, grid: f64, steps: i64, lo: &[i64], hi: &[i64]) -> Option<Vec<i64>> {
    const MAX_POINTS: f64 = 1e7;
    let points: f64 = lo.iter().zip(hi).map(|(a, b)| (b - a + 1) as f64).product();
    if points <= MAX_POINTS {
        return exhaustive(s, budget, grid, lo, hi, 1);
    }
    let stride = 10;
    let coarse = exhaustive(s, budget, grid, lo, hi, stride)?;
    let margin = 2 * stride;
    let lo2: Vec<i64> = coarse.iter().zip(lo).map(|(c, l)| (c - margin).max(*l)).collect();
    let hi2: Vec<i64> = coarse.iter().zip(hi).map(|(c, h)| (c + margin).min(*h).min(steps)).collect();
    search_grid(s, budget, grid, steps, &lo2, &hi2)
}

fn exhaustive(s: &[f64], budget: f64, grid: f64, lo: &[i64], hi: &[i64], stride: i64) -> Option<Vec<i64>> {
    let k = lo.len();
    let mut idx = lo.to_vec();
    let mut best: Option<(f64, Vec<i64>)> = None;
    loop {
        let used: f64 = idx.iter().map(|&i| i as f64 * grid).sum();
        let last = budget - used;
        if last > 0.0 && last <= 1.0 + 1e-12 {
            let obj: f64 = idx
                .iter()
                .zip(s)
                .map(|(&i, s)| s / (i as f64 * grid))
                .sum::<f64>()
                + s[k] / last;
            if best.as_ref().is_none_or(|(b, _)| obj < *b) {
                best = Some((obj, idx.clone()));
            }
        }
        // odometer increment
        let mut pos = 0;
        loop {
            if pos == k {
                return best.map(|(_, ix)| ix);
            }
            idx[pos] += stride;
            if idx[pos] <= hi[pos] {
                break;
            }
            idx[pos] = lo[pos];
            pos += 1;
        }
    }
}

/// Worst gap `Σ S_i (1/(π_i − δ_i) − 1/π_i)` from moving `pi` to the
/// nearest point of a grid with spacing `grid`.
pub fn grid_objective_bound(scores: &[f64], pi: &[f64], grid: f64) -> f64 {
    let n = pi.len();
    pi.iter()
        .zip(scores)
        .enumerate()
        .map(|(i, (&p, &s))| {
            let delta = if i + 1 == n { (n - 1) as f64 * grid } else { grid };
            let shrunk = (p - delta).max(p * 0.5);
            s * (1.0 / shrunk - 1.0 / p)
        })
        .sum()
}

/// Largest `|g_i − fd_i|` relative to `‖g‖∞`, with central differences of
/// size `step` on the full dataset.
pub fn finite_difference_check(problem: &Problem, params: &[f64], step: f64) -> Result<f64> {
    if !(step > 0.0) {
        return Err(CurvzoError::invalid(format!("step must be > 0, got {step}")));
    }
    let g = problem.exact_gradient(params, &Minibatch::Full)?;
    let mut w = params.to_vec();
    let mut worst = 0.0f64;
    let scale = g.iter().fold(0.0f64, |a, x| a.max(x.abs())).max(1e-12);
    for i in 0..w.len() {
        let orig = w[i];
        w[i] = orig + step;
        let up = problem.loss(&w, &Minibatch::Full)?;
        w[i] = orig - step;
        let down = problem.loss(&w, &Minibatch::Full)?;
        w[i] = orig;
        let fd = (up - down) / (2.0 * step);
        worst = worst.max((fd - g[i]).abs() / scale);
    }
    Ok(worst)
}
