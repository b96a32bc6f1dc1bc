//! `verify` suites over the oracle module.

use curvzo::optimizer::{run, BudgetSpec, Granularity, Mode, OptimizerConfig};
use curvzo::oracle::{
    brute_force_p1, closed_form_score_expectation, enumerate_score_expectation,
    finite_difference_check, grid_objective_bound, mc_estimator_moments, mc_ht_second_moment,
    mc_score_moments, EstimatorKind, MomentReport,
};
use curvzo::perturbation::{Phase, SeedState};
use curvzo::problems::{make_anisotropic_quadratic, make_logistic, make_mlp, Partition, Problem, Quadratic};
use curvzo::sampler::{total_variance_objective, variance_minimizing_pi, ClipRule};
use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Suite {
    Moments,
    P1,
    Gradient,
    Reductions,
    All,
}

/// One line of the verification report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckRecord {
    pub suite: String,
    pub check: String,
    pub pass: bool,
    pub detail: Value,
}

#[derive(Clone, Copy, Debug)]
pub struct VerifyOptions {
    pub seed: u64,
    /// Monte Carlo draws per moment check.
    pub samples: u64,
    /// Random instances in the p1 suite.
    pub instances: usize,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            samples: 1_000_000,
            instances: 200,
        }
    }
}

const Z_LIMIT: f64 = 4.0;

fn moment_record(check: &str, report: &MomentReport) -> CheckRecord {
    CheckRecord {
        suite: "moments".into(),
        check: check.into(),
        pass: report.passes(Z_LIMIT),
        detail: json!({
            "samples": report.samples,
            "max_abs_z": report.max_abs_z,
            "z_scores": report.z_scores,
            "mean": report.mean,
            "target": report.target,
        }),
    }
}

fn diag_quadratic(a: &[f64]) -> Result<Problem, CliError> {
    Ok(Problem::Quadratic(Quadratic::diagonal(a.to_vec(), vec![0.0; a.len()])?))
}

pub fn suite_moments(opts: &VerifyOptions) -> Result<Vec<CheckRecord>, CliError> {
    let n = opts.samples;
    let s = opts.seed;
    let mut out = Vec::new();
    let q = diag_quadratic(&[2.0, 8.0])?;
    let w = [1.0, 1.0];
    let pi = [0.2, 0.9];
    for (name, kind, p, seed) in [
        ("ht_sparse", EstimatorKind::Ht, &pi[..], s),
        ("naive_sparse", EstimatorKind::Naive, &pi[..], s + 1),
        ("dense_spsa", EstimatorKind::Dense, &[1.0, 1.0][..], s + 2),
    ] {
        let r = mc_estimator_moments(&q, &w, p, 1e-3, n, seed, &kind)?;
        out.push(moment_record(name, &r));
    }
    let q6 = make_anisotropic_quadratic(6, 100.0, s)?;
    let partition = Partition::equal(6, 3)?;
    let r = mc_estimator_moments(&q6, &[1.0; 6], &[0.3, 0.6, 0.9], 1e-3, n, s + 3, &EstimatorKind::Block(partition))?;
    out.push(moment_record("block_ht", &r));

    let scores = mc_score_moments(&[1.0, 2.0], &[0.5, 0.5], n, s + 4)?;
    out.push(moment_record("raw_score_mean", &scores.raw));
    out.push(moment_record("unbiased_variant_mean", &scores.variant));
    let r = mc_ht_second_moment(&[2.0, 8.0], &[0.2, 0.9], n, s + 5)?;
    out.push(moment_record("ht_second_moment", &r));

    let g = [1.0, 2.0];
    let pi = [0.5, 0.5];
    let closed = closed_form_score_expectation(&g, &pi)?;
    let enumerated = enumerate_score_expectation(&g, &pi)?;
    let gap = closed.iter().zip(&enumerated).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    out.push(CheckRecord {
        suite: "moments".into(),
        check: "enumeration_matches_closed_form".into(),
        pass: gap <= 1e-12,
        detail: json!({ "closed_form": closed, "enumerated": enumerated, "max_gap": gap }),
    });
    Ok(out)
}

pub fn suite_p1(opts: &VerifyOptions) -> Result<Vec<CheckRecord>, CliError> {
    let grid = 0.001;
    let mut rng = SeedState::new(opts.seed, 0, Phase::Oracle, 1).rng();
    let mut failures = Vec::new();
    let mut worst_excess = f64::NEG_INFINITY;
    let mut unclipped_checked = 0usize;
    let mut unclipped_worst = 0.0f64;
    for k in 0..opts.instances {
        let n = rng.gen_range(1..=4usize);
        let scores: Vec<f64> = (0..n).map(|_| (rng.gen_range(-3.0..3.0f64)).exp()).collect();
        let budget = rng.gen_range(0.05..=1.0) * n as f64;
        let plan = variance_minimizing_pi(&scores, budget, 0.0, ClipRule::WaterFilling)?;
        let brute = brute_force_p1(&scores, budget, grid)?;
        let obj_wf = total_variance_objective(&scores, &plan.pi)?;
        let obj_bf = total_variance_objective(&scores, &brute)?;
        let bound = grid_objective_bound(&scores, &plan.pi, grid);
        let tol = 1e-9 * obj_wf.abs().max(1.0);
        // water-filling must be no worse than any grid point and the grid
        // optimum no further than the rounding bound
        let excess = obj_bf - obj_wf;
        worst_excess = worst_excess.max(excess - bound);
        if excess < -tol || excess > bound + tol {
            failures.push(json!({
                "instance": k, "scores": scores, "budget": budget,
                "water_filling": plan.pi, "brute_force": brute, "gap": excess, "bound": bound,
            }));
        }
        if plan.clipped.is_empty() {
            let root: f64 = scores.iter().map(|s| s.sqrt()).sum();
            let closed = root * root / budget;
            let rel = (obj_wf - closed).abs() / closed;
            unclipped_checked += 1;
            unclipped_worst = unclipped_worst.max(rel);
            if rel > 1e-9 {
                failures.push(json!({ "instance": k, "closed_form_rel_err": rel }));
            }
        }
    }
    Ok(vec![CheckRecord {
        suite: "p1".into(),
        check: "water_filling_vs_brute_force".into(),
        pass: failures.is_empty(),
        detail: json!({
            "instances": opts.instances,
            "grid": grid,
            "worst_gap_minus_bound": worst_excess,
            "unclipped_instances": unclipped_checked,
            "unclipped_worst_rel_err": unclipped_worst,
            "failures": failures,
        }),
    }])
}

pub fn suite_gradient(opts: &VerifyOptions) -> Result<Vec<CheckRecord>, CliError> {
    let mut rng = SeedState::new(opts.seed, 0, Phase::Oracle, 2).rng();
    let mut point = |d: usize| -> Vec<f64> { (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect() };
    let quad = make_anisotropic_quadratic(8, 100.0, opts.seed)?;
    let logistic = make_logistic(6, 64, opts.seed)?;
    let mlp = make_mlp(4, &[6, 5], 48, opts.seed)?;
    let cases = [
        ("quadratic", &quad, point(8), 1e-3, 1e-10),
        ("logistic", &logistic, point(6), 1e-5, 1e-6),
        ("mlp", &mlp, mlp.default_init(), 1e-4, 1e-4),
    ];
    let mut out = Vec::new();
    for (name, problem, params, step, limit) in cases {
        let err = finite_difference_check(problem, &params, step)?;
        out.push(CheckRecord {
            suite: "gradient".into(),
            check: format!("finite_difference_{name}"),
            pass: err < limit,
            detail: json!({ "step": step, "max_rel_err": err, "limit": limit }),
        });
    }
    Ok(out)
}

fn bits(x: &[f64]) -> Vec<u64> {
    x.iter().map(|v| v.to_bits()).collect()
}

/// Per-step (loss, Δ) bit patterns and final parameters of one run.
fn trajectory(problem: &Problem, config: &OptimizerConfig) -> Result<(Vec<(u64, u64)>, Vec<u64>), CliError> {
    let (records, state) = run(config, problem)?;
    let per_step = records.iter().map(|r| (r.loss.to_bits(), r.delta.to_bits())).collect();
    Ok((per_step, bits(&state.params.values)))
}

/// Steps until two trajectories first differ, if they do.
fn first_divergence(a: &(Vec<(u64, u64)>, Vec<u64>), b: &(Vec<(u64, u64)>, Vec<u64>)) -> Option<usize> {
    match a.0.iter().zip(&b.0).position(|(x, y)| x != y) {
        Some(i) => Some(i),
        None if a.0.len() != b.0.len() || a.1 != b.1 => Some(a.0.len().min(b.0.len())),
        None => None,
    }
}

pub fn suite_reductions(opts: &VerifyOptions, steps: u64) -> Result<Vec<CheckRecord>, CliError> {
    let d = 16;
    let problem = make_anisotropic_quadratic(d, 50.0, opts.seed)?;
    let base = |mode: Mode| {
        let mut c = OptimizerConfig::new(mode, 5e-4, steps, opts.seed);
        c.floor = Some(0.0);
        c.budget = Some(BudgetSpec::Fixed(d as f64));
        c
    };
    let mezo = trajectory(&problem, &base(Mode::MezoDense))?;
    let curvzo = trajectory(&problem, &base(Mode::Curvzo))?;
    let uniform = trajectory(&problem, &base(Mode::UniformSparseAb))?;

    let mut coord = base(Mode::Curvzo);
    coord.budget = Some(BudgetSpec::Fixed(5.0));
    coord.floor = None;
    let mut singleton = coord.clone();
    singleton.granularity = Granularity::Block;
    singleton.blocks = Some(d);
    singleton.floor = Some(curvzo::sampler::DEFAULT_FLOOR_COORDINATE);
    let coord_run = trajectory(&problem, &coord)?;
    let single_run = trajectory(&problem, &singleton)?;

    let record = |check: &str, a, b| {
        let diverged = first_divergence(a, b);
        CheckRecord {
            suite: "reductions".into(),
            check: check.into(),
            pass: diverged.is_none(),
            detail: json!({ "steps": steps, "first_divergent_step": diverged }),
        }
    };
    Ok(vec![
        record("mezo_equals_curvzo_full_budget", &mezo, &curvzo),
        record("curvzo_equals_uniform_full_budget", &curvzo, &uniform),
        record("singleton_blocks_equal_coordinates", &coord_run, &single_run),
    ])
}

pub fn cmd_verify(suite: Suite, opts: &VerifyOptions) -> Result<Vec<CheckRecord>, CliError> {
    let mut out = Vec::new();
    let all = suite == Suite::All;
    if all || suite == Suite::Moments {
        out.extend(suite_moments(opts)?);
    }
    if all || suite == Suite::P1 {
        out.extend(suite_p1(opts)?);
    }
    if all || suite == Suite::Gradient {
        out.extend(suite_gradient(opts)?);
    }
    if all || suite == Suite::Reductions {
        out.extend(suite_reductions(opts, 1000)?);
    }
    Ok(out)
}
