//! Training loops: CurvZO and the baselines it is compared against.
//!
//! One step of CurvZO, in order:
//!
//! 1. statistics `(d_eff, H)` of the current scores `S`;
//! 2. budget `B` (adaptive, fixed, or an externally supplied trace);
//! 3. sampling plan `π` from `S` and `B`;
//! 4. mask and Gaussian draw from the step seed, `v = m ⊙ z`;
//! 5. two-point response `Δ` (exactly two loss queries);
//! 6. Horvitz–Thompson estimate (coordinate or block);
//! 7. `ω ← ω − η g̃`;
//! 8. EMA update of `S` with the normalized (or block) score.
//!
//! Scores used at step `t` therefore reflect responses through step `t − 1`.

use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::curvature::{
    block_score, normalized_score, score_stats, CurvatureScores, ScoreMode, ScoreStats,
    DEFAULT_BETA,
};
use crate::error::{CurvzoError, Result};
use crate::estimator::{
    block_ht, dense_spsa, ht_sparse, two_point_response, CountingObjective, Response,
    DEFAULT_EPS,
};
use crate::perturbation::{self, MaskSpec, Phase, SeedState, SparsePerturbation};
use crate::problems::{Minibatch, ParameterState, Partition, Problem};
use crate::sampler::{
    adaptive_budget, variance_minimizing_pi, BudgetPolicy, ClipRule, SamplingPlan,
    DEFAULT_FLOOR_BLOCK, DEFAULT_FLOOR_COORDINATE,
};

/// Training length used when none is given.
pub const DEFAULT_STEPS: u64 = 20_000;
pub const DEFAULT_DIAG_INTERVAL: u64 = 10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Curvzo,
    MezoDense,
    UniformSparseAb,
    CurvzoFixedBudget,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Granularity {
    #[default]
    Coordinate,
    Block,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepsizeRule {
    #[default]
    Constant,
    /// `η = 1/(3L)`; quadratics only.
    #[serde(rename = "one_over_3l")]
    OneOver3L,
}

/// Whether the update reuses the stored direction or regenerates it from
/// the step seed after the response is taken.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PerturbationPath {
    #[default]
    Store,
    Replay,
}

/// Treatment of unselected entries in the score EMA.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnselectedScores {
    /// Observation is zero, so the entry decays by `1 − β`.
    #[default]
    Decay,
    Hold,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BudgetSpec {
    Adaptive(BudgetPolicy),
    Fixed(f64),
    /// Per-step budgets, e.g. recorded from another run.
    Trace(Vec<f64>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub mode: Mode,
    pub granularity: Granularity,
    /// Number of equal contiguous blocks; `None` uses the problem's natural
    /// partition.
    pub blocks: Option<usize>,
    pub eta: f64,
    pub stepsize_rule: StepsizeRule,
    pub eps: f64,
    pub beta: f64,
    /// `None` means `BudgetPolicy::default_for(n)`.
    pub budget: Option<BudgetSpec>,
    /// Steps between budget recomputations.
    pub budget_interval: u64,
    /// `None` picks the granularity default.
    pub floor: Option<f64>,
    pub clip: ClipRule,
    pub unselected: UnselectedScores,
    pub path: PerturbationPath,
    pub steps: u64,
    pub batch_size: usize,
    pub run_seed: u64,
    pub diag_interval: u64,
    pub record_wall_time: bool,
}

impl OptimizerConfig {
    pub fn new(mode: Mode, eta: f64, steps: u64, run_seed: u64) -> Self {
        Self {
            mode,
            granularity: Granularity::Coordinate,
            blocks: None,
            eta,
            stepsize_rule: StepsizeRule::Constant,
            eps: DEFAULT_EPS,
            beta: DEFAULT_BETA,
            budget: None,
            budget_interval: 1,
            floor: None,
            clip: ClipRule::WaterFilling,
            unselected: UnselectedScores::Decay,
            path: PerturbationPath::Store,
            steps,
            batch_size: 32,
            run_seed,
            diag_interval: DEFAULT_DIAG_INTERVAL,
            record_wall_time: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(CurvzoError::invalid("steps must be >= 1"));
        }
        if self.stepsize_rule == StepsizeRule::Constant && !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(CurvzoError::invalid(format!("eta must be > 0, got {}", self.eta)));
        }
        if !(self.eps > 0.0 && self.eps.is_finite()) {
            return Err(CurvzoError::invalid(format!("eps must be > 0, got {}", self.eps)));
        }
        if !(self.beta > 0.0 && self.beta <= 1.0) {
            return Err(CurvzoError::invalid(format!("beta must lie in (0, 1], got {}", self.beta)));
        }
        if self.budget_interval == 0 || self.diag_interval == 0 {
            return Err(CurvzoError::invalid("budget_interval and diag_interval must be >= 1"));
        }
        if let Some(f) = self.floor {
            if !(0.0..1.0).contains(&f) {
                return Err(CurvzoError::invalid(format!("floor must lie in [0, 1), got {f}")));
            }
        }
        if self.mode == Mode::CurvzoFixedBudget && !matches!(self.budget, Some(BudgetSpec::Fixed(_))) {
            return Err(CurvzoError::invalid("curvzo_fixed_budget mode needs a fixed budget"));
        }
        Ok(())
    }
}

/// Metrics of one step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    /// Full-objective loss at the iterate the step started from.
    pub loss: f64,
    pub delta: f64,
    pub budget: f64,
    pub d_eff: f64,
    #[serde(rename = "H")]
    pub entropy: f64,
    /// Exact `‖∇ℒ(ω_t)‖`, every `diag_interval` steps.
    pub grad_norm_oracle: Option<f64>,
    pub wall_nanos: u64,
    pub selected: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainerState {
    pub params: ParameterState,
    pub scores: CurvatureScores,
    /// Key of the next step's randomness; `seed.step == step`.
    pub seed: SeedState,
    pub step: u64,
    pub budget: f64,
    #[serde(skip)]
    pub last_plan: Option<SamplingPlan>,
}

/// Owns one run's state and advances it step by step.
#[derive(Debug)]
pub struct Trainer<'p> {
    problem: &'p Problem,
    config: OptimizerConfig,
    eta: f64,
    floor: f64,
    partition: Option<Partition>,
    state: TrainerState,
    evaluations: u64,
}

impl<'p> Trainer<'p> {
    pub fn new(problem: &'p Problem, config: OptimizerConfig) -> Result<Self> {
        let init = problem.default_init();
        Self::with_params(problem, config, init)
    }

    pub fn with_params(problem: &'p Problem, config: OptimizerConfig, init: Vec<f64>) -> Result<Self> {
        config.validate()?;
        let d = problem.dim();
        crate::error::check_len(d, init.len())?;
        let eta = match config.stepsize_rule {
            StepsizeRule::Constant => config.eta,
            StepsizeRule::OneOver3L => 1.0 / (3.0 * problem.smoothness_constant()?),
        };
        let partition = match config.granularity {
            Granularity::Coordinate => None,
            Granularity::Block => Some(match config.blocks {
                Some(g) => Partition::equal(d, g)?,
                None => problem.natural_partition().ok_or_else(|| {
                    CurvzoError::invalid(format!(
                        "block mode on a {} problem needs an explicit block count",
                        problem.kind_name()
                    ))
                })?,
            }),
        };
        let (n, mode) = match &partition {
            Some(p) => (p.num_blocks(), ScoreMode::Block),
            None => (d, ScoreMode::Coordinate),
        };
        let floor = config.floor.unwrap_or(match config.granularity {
            Granularity::Coordinate => DEFAULT_FLOOR_COORDINATE,
            Granularity::Block => DEFAULT_FLOOR_BLOCK,
        });
        match &config.budget {
            Some(BudgetSpec::Adaptive(p)) => p.validate(n)?,
            Some(BudgetSpec::Fixed(b)) if !(*b > 0.0 && *b <= n as f64) => {
                return Err(CurvzoError::InfeasibleBudget { budget: *b, n, floor })
            }
            Some(BudgetSpec::Trace(t)) if (t.len() as u64) < config.steps => {
                return Err(CurvzoError::invalid(format!(
                    "budget trace has {} entries for {} steps",
                    t.len(),
                    config.steps
                )))
            }
            _ => {}
        }
        let mut params = ParameterState::new(init)?;
        if let Some(p) = &partition {
            params = params.with_partition(p.clone())?;
        }
        let scores = CurvatureScores::uniform(n, config.beta, mode)?;
        let state = TrainerState {
            params,
            scores,
            seed: SeedState::new(config.run_seed, 0, Phase::Perturb, 0),
            step: 0,
            budget: n as f64,
            last_plan: None,
        };
        Ok(Self {
            problem,
            config,
            eta,
            floor,
            partition,
            state,
            evaluations: 0,
        })
    }

    /// Rebuilds a trainer from a saved state; `config` must be the one the
    /// state was produced with.
    pub fn resume(problem: &'p Problem, config: OptimizerConfig, state: TrainerState) -> Result<Self> {
        let mut trainer = Self::with_params(problem, config, state.params.values.clone())?;
        if state.scores.len() != trainer.state.scores.len() || state.scores.mode != trainer.state.scores.mode {
            return Err(CurvzoError::Checkpoint(
                "checkpoint scores do not match the configured granularity".into(),
            ));
        }
        if state.seed.step != state.step || state.seed.run_seed != trainer.config.run_seed {
            return Err(CurvzoError::Checkpoint(format!(
                "checkpoint seed {} inconsistent with step {} / run seed {}",
                state.seed, state.step, trainer.config.run_seed
            )));
        }
        trainer.state = TrainerState {
            params: ParameterState {
                partition: trainer.state.params.partition.clone(),
                ..state.params
            },
            ..state
        };
        Ok(trainer)
    }

    pub fn state(&self) -> &TrainerState {
        &self.state
    }

    pub fn into_state(self) -> TrainerState {
        self.state
    }

    pub fn config(&self) -> &OptimizerConfig {
        &self.config
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn floor(&self) -> f64 {
        self.floor
    }

    pub fn partition(&self) -> Option<&Partition> {
        self.partition.as_ref()
    }

    /// Loss queries issued by the optimizer so far (diagnostics excluded).
    pub fn evaluations(&self) -> u64 {
        self.evaluations
    }

    pub fn is_finished(&self) -> bool {
        self.state.step >= self.config.steps
    }

    fn score_len(&self) -> usize {
        self.state.scores.len()
    }

    fn budget_for(&self, step: u64, stats: &ScoreStats) -> Result<f64> {
        let n = self.score_len();
        if !step.is_multiple_of(self.config.budget_interval) {
            return Ok(self.state.budget);
        }
        Ok(match &self.config.budget {
            None => adaptive_budget(&BudgetPolicy::default_for(n), stats),
            Some(BudgetSpec::Adaptive(p)) => adaptive_budget(p, stats),
            Some(BudgetSpec::Fixed(b)) => *b,
            Some(BudgetSpec::Trace(t)) => *t.get(step as usize).ok_or_else(|| {
                CurvzoError::invalid(format!("budget trace ends before step {step}"))
            })?,
        })
    }

    fn plan(&self, budget: f64) -> Result<SamplingPlan> {
        let n = self.score_len();
        match self.config.mode {
            Mode::UniformSparseAb => {
                if budget > n as f64 || budget <= 0.0 {
                    return Err(CurvzoError::InfeasibleBudget { budget, n, floor: 0.0 });
                }
                Ok(SamplingPlan::uniform(n, budget))
            }
            _ => variance_minimizing_pi(&self.state.scores.values, budget, self.floor, self.config.clip),
        }
    }

    fn perturbation(&self, seed: SeedState, plan: Option<&SamplingPlan>) -> Result<SparsePerturbation> {
        let d = self.problem.dim();
        match (plan, &self.partition) {
            (None, _) => Ok(perturbation::dense(seed, d)),
            (Some(plan), None) => perturbation::replay(seed, MaskSpec::Coordinate(&plan.pi), d),
            (Some(plan), Some(partition)) => perturbation::replay(
                seed,
                MaskSpec::Block {
                    pi_blk: &plan.pi,
                    partition,
                },
                d,
            ),
        }
    }

    fn estimate(&self, response: &Response, pert: &SparsePerturbation, plan: Option<&SamplingPlan>) -> Result<Vec<f64>> {
        Ok(match (plan, &self.partition) {
            (None, _) => dense_spsa(response, pert)?.values,
            (Some(plan), None) => ht_sparse(response, pert, &plan.pi)?.values,
            (Some(plan), Some(partition)) => block_ht(response, pert, &plan.pi, partition)?.values,
        })
    }

    /// Advances one step and returns its metrics.
    pub fn step(&mut self) -> Result<StepRecord> {
        let t = self.state.step;
        let started = self.config.record_wall_time.then(Instant::now);
        let seed = self.state.seed;
        let d = self.problem.dim();
        let batch = Minibatch::sample(
            seed.with_phase(Phase::Batch),
            self.problem.num_examples(),
            self.config.batch_size,
        );

        let loss = self.problem.loss(&self.state.params.values, &Minibatch::Full)?;
        let grad_norm_oracle = if t.is_multiple_of(self.config.diag_interval) {
            let g = self.problem.exact_gradient(&self.state.params.values, &Minibatch::Full)?;
            Some(g.iter().map(|x| x * x).sum::<f64>().sqrt())
        } else {
            None
        };

        let (plan, stats, budget) = match self.config.mode {
            Mode::MezoDense => (
                None,
                ScoreStats {
                    d_eff: d as f64,
                    entropy: 1.0,
                    n: d,
                },
                d as f64,
            ),
            _ => {
                let stats = score_stats(&self.state.scores.values);
                let budget = self.budget_for(t, &stats)?;
                (Some(self.plan(budget)?), stats, budget)
            }
        };

        let pert = self.perturbation(seed, plan.as_ref())?;
        let counter = CountingObjective::new(self.problem);
        let response = two_point_response(
            &counter,
            &mut self.state.params.values,
            &pert.v,
            self.config.eps,
            &batch,
        )
        .map_err(|e| e.at_step(t))?;
        self.evaluations += counter.calls();

        let pert = match self.config.path {
            PerturbationPath::Store => pert,
            PerturbationPath::Replay => {
                drop(pert);
                self.perturbation(seed, plan.as_ref())?
            }
        };
        let estimate = self.estimate(&response, &pert, plan.as_ref())?;
        let eta = self.eta;
        for (w, g) in self.state.params.values.iter_mut().zip(&estimate) {
            *w -= eta * g;
        }
        if let Some(i) = self.state.params.values.iter().position(|w| !w.is_finite()) {
            return Err(CurvzoError::NumericalFailure {
                step: t,
                detail: format!("parameter {i} became non-finite"),
            });
        }

        if plan.is_some() {
            self.update_scores(&response, &pert)?;
        }

        self.state.step += 1;
        self.state.seed = SeedState::new(self.config.run_seed, self.state.step, Phase::Perturb, 0);
        self.state.budget = budget;
        self.state.last_plan = plan;

        Ok(StepRecord {
            step: t,
            loss,
            delta: response.delta,
            budget,
            d_eff: stats.d_eff,
            entropy: stats.entropy,
            grad_norm_oracle,
            wall_nanos: started.map_or(0, |s| s.elapsed().as_nanos() as u64),
            selected: pert.selected_count(),
        })
    }

    fn update_scores(&mut self, response: &Response, pert: &SparsePerturbation) -> Result<()> {
        let (observation, selected) = match &self.partition {
            None => (normalized_score(response, pert), pert.mask.clone()),
            Some(partition) => (
                block_score(response, pert, partition)?,
                partition.ranges().iter().map(|r| pert.mask[r.start]).collect(),
            ),
        };
        // empty mask: skip the update entirely
        let Some(observation) = observation else {
            return Ok(());
        };
        match self.config.unselected {
            UnselectedScores::Decay => self.state.scores.ema_update(&observation),
            UnselectedScores::Hold => self.state.scores.ema_update_selected(&observation, &selected),
        }
    }

    /// Runs until `config.steps`, passing every record to `sink`.
    pub fn run_to_end(&mut self, mut sink: impl FnMut(&StepRecord) -> Result<()>) -> Result<()> {
        while !self.is_finished() {
            let record = self.step()?;
            sink(&record)?;
        }
        Ok(())
    }
}

/// Runs `config.steps` steps from the problem's default start.
pub fn run(config: &OptimizerConfig, problem: &Problem) -> Result<(Vec<StepRecord>, TrainerState)> {
    let mut trainer = Trainer::new(problem, config.clone())?;
    let mut records = Vec::with_capacity(config.steps as usize);
    trainer.run_to_end(|r| {
        records.push(r.clone());
        Ok(())
    })?;
    Ok((records, trainer.into_state()))
}

const CHECKPOINT_MAGIC: &str = "CURVZO-CHECKPOINT";
const CHECKPOINT_VERSION: u32 = 1;

/// Versioned checkpoint: magic header line followed by a JSON body.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub config_digest: String,
    pub state: TrainerState,
}

impl Checkpoint {
    pub fn to_text(&self) -> String {
        let body = serde_json::to_string(self).expect("checkpoint serializes");
        format!("{CHECKPOINT_MAGIC} v{CHECKPOINT_VERSION}\n{body}\n")
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let (header, body) = text
            .split_once('\n')
            .ok_or_else(|| CurvzoError::Checkpoint("missing header line".into()))?;
        let version = header
            .strip_prefix(CHECKPOINT_MAGIC)
            .and_then(|rest| rest.trim().strip_prefix('v'))
            .ok_or_else(|| CurvzoError::Checkpoint(format!("bad magic header `{header}`")))?;
        if version != CHECKPOINT_VERSION.to_string() {
            return Err(CurvzoError::Checkpoint(format!(
                "unsupported checkpoint version {version}"
            )));
        }
        serde_json::from_str(body.trim()).map_err(|e| CurvzoError::Checkpoint(e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, self.to_text()).map_err(|e| CurvzoError::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| CurvzoError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CurvzoError::io(path, e))?;
        Self::from_text(&text)
    }
}
