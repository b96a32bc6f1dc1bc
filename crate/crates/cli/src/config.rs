//! TOML run configuration.
//!
//! ```toml
//! [problem]
//! kind = "quadratic"
//! dim = 100
//! condition = 100.0
//!
//! [optimizer]
//! mode = "curvzo"
//! eta = 1e-4
//! steps = 2000
//!
//! [budget]
//! kind = "adaptive"
//!
//! [run]
//! seeds = [0, 1, 2]
//! ```

use std::path::{Path, PathBuf};

use curvzo::optimizer::{
    BudgetSpec, Granularity, Mode, OptimizerConfig, PerturbationPath, StepsizeRule,
    UnselectedScores, DEFAULT_DIAG_INTERVAL,
};
use curvzo::problems::{make_anisotropic_quadratic, make_logistic, make_mlp, Problem};
use curvzo::sampler::{BudgetPolicy, ClipRule};
use curvzo::{curvature::DEFAULT_BETA, estimator::DEFAULT_EPS};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProblemKind {
    Quadratic,
    Logistic,
    Mlp,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSection {
    pub kind: ProblemKind,
    /// Parameter count for quadratic and logistic, input width for mlp.
    pub dim: usize,
    #[serde(default = "default_condition")]
    pub condition: f64,
    #[serde(default)]
    pub hidden: Vec<usize>,
    #[serde(default = "default_examples")]
    pub examples: usize,
    #[serde(default)]
    pub data_seed: u64,
}

fn default_condition() -> f64 {
    100.0
}

fn default_examples() -> usize {
    256
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerSection {
    pub mode: Mode,
    #[serde(default)]
    pub granularity: Granularity,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub blocks: Option<usize>,
    /// Required unless `stepsize_rule = "one_over_3l"`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta: Option<f64>,
    #[serde(default)]
    pub stepsize_rule: StepsizeRule,
    #[serde(default = "default_eps")]
    pub eps: f64,
    #[serde(default = "default_beta")]
    pub beta: f64,
    pub steps: u64,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub floor: Option<f64>,
    #[serde(default)]
    pub clip: ClipRule,
    #[serde(default)]
    pub unselected: UnselectedScores,
    #[serde(default)]
    pub path: PerturbationPath,
    #[serde(default = "one")]
    pub budget_interval: u64,
}

fn default_eps() -> f64 {
    DEFAULT_EPS
}

fn default_beta() -> f64 {
    DEFAULT_BETA
}

fn default_batch() -> usize {
    32
}

fn one() -> u64 {
    1
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BudgetKind {
    #[default]
    Adaptive,
    Fixed,
}

/// Budget keys; absolute values win over fractions of `n` (coordinates or
/// blocks).
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BudgetSection {
    #[serde(default)]
    pub kind: BudgetKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b_min: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b_max: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fraction: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_diag")]
    pub diag_interval: u64,
    /// Steps between checkpoints; 0 disables them.
    #[serde(default)]
    pub checkpoint_interval: u64,
    #[serde(default = "default_threshold")]
    pub threshold: f64,
    /// Off by default so metrics streams stay byte-reproducible.
    #[serde(default)]
    pub record_wall_time: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            seeds: default_seeds(),
            diag_interval: default_diag(),
            checkpoint_interval: 0,
            threshold: default_threshold(),
            record_wall_time: false,
            out: None,
        }
    }
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

fn default_diag() -> u64 {
    DEFAULT_DIAG_INTERVAL
}

fn default_threshold() -> f64 {
    0.1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub problem: ProblemSection,
    pub optimizer: OptimizerSection,
    #[serde(default)]
    pub budget: BudgetSection,
    #[serde(default)]
    pub run: RunSection,
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, CliError> {
        let value: toml::Value = text
            .parse()
            .map_err(|e: toml::de::Error| CliError::Config(e.message().to_string()))?;
        Self::from_value(value)
    }

    /// Deserializes with the key path of the first offending entry.
    pub fn from_value(value: toml::Value) -> Result<Self, CliError> {
        let config: RunConfig = serde_path_to_error::deserialize(value).map_err(|e| {
            let path = e.path().to_string();
            CliError::Config(if path == "." {
                e.inner().to_string()
            } else {
                format!("{path}: {}", e.inner())
            })
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Canonical form: serialized without the output directory, which does
    /// not affect results.
    pub fn canonical(&self) -> String {
        let mut c = self.clone();
        c.run.out = None;
        c.to_toml_string()
    }

    /// SHA-256 of the canonical form with the seed list removed, hex
    /// encoded. Every seed of one config shares the digest.
    pub fn digest(&self) -> String {
        let mut c = self.clone();
        c.run.seeds.clear();
        hex::encode(Sha256::digest(c.canonical().as_bytes()))
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |key: &str, msg: String| Err(CliError::Config(format!("{key}: {msg}")));
        let p = &self.problem;
        if p.dim == 0 {
            return bad("problem.dim", "must be >= 1".into());
        }
        if p.kind == ProblemKind::Quadratic && !(p.condition >= 1.0 && p.condition.is_finite()) {
            return bad("problem.condition", format!("must be >= 1, got {}", p.condition));
        }
        if p.kind != ProblemKind::Quadratic && p.examples == 0 {
            return bad("problem.examples", "must be >= 1".into());
        }
        if p.kind != ProblemKind::Mlp && !p.hidden.is_empty() {
            return bad("problem.hidden", "only valid for kind = \"mlp\"".into());
        }
        let o = &self.optimizer;
        match (o.stepsize_rule, o.eta) {
            (StepsizeRule::Constant, None) => return bad("optimizer.eta", "missing (required with a constant step size)".into()),
            (_, Some(eta)) if !(eta > 0.0 && eta.is_finite()) => {
                return bad("optimizer.eta", format!("must be > 0, got {eta}"))
            }
            (StepsizeRule::OneOver3L, _) if p.kind != ProblemKind::Quadratic => {
                return bad("optimizer.stepsize_rule", "one_over_3l needs a quadratic problem".into())
            }
            _ => {}
        }
        if o.steps == 0 {
            return bad("optimizer.steps", "must be >= 1".into());
        }
        if !(o.eps > 0.0 && o.eps.is_finite()) {
            return bad("optimizer.eps", format!("must be > 0, got {}", o.eps));
        }
        if !(o.beta > 0.0 && o.beta <= 1.0) {
            return bad("optimizer.beta", format!("must lie in (0, 1], got {}", o.beta));
        }
        if o.batch_size == 0 {
            return bad("optimizer.batch_size", "must be >= 1".into());
        }
        if let Some(f) = o.floor {
            if !(0.0..1.0).contains(&f) {
                return bad("optimizer.floor", format!("must lie in [0, 1), got {f}"));
            }
        }
        if o.budget_interval == 0 {
            return bad("optimizer.budget_interval", "must be >= 1".into());
        }
        if o.blocks == Some(0) {
            return bad("optimizer.blocks", "must be >= 1".into());
        }
        let b = &self.budget;
        if let Some(f) = b.fraction {
            if !(f > 0.0 && f <= 1.0) {
                return bad("budget.fraction", format!("must lie in (0, 1], got {f}"));
            }
        }
        if b.kind == BudgetKind::Fixed && b.value.is_none() && b.fraction.is_none() {
            return bad("budget.value", "a fixed budget needs `value` or `fraction`".into());
        }
        if o.mode == Mode::CurvzoFixedBudget && b.kind != BudgetKind::Fixed {
            return bad("budget.kind", "curvzo_fixed_budget mode needs kind = \"fixed\"".into());
        }
        if let Some(a) = b.alpha {
            if !(0.0..=1.0).contains(&a) {
                return bad("budget.alpha", format!("must lie in [0, 1], got {a}"));
            }
        }
        let r = &self.run;
        if r.seeds.is_empty() {
            return bad("run.seeds", "must list at least one seed".into());
        }
        if r.diag_interval == 0 {
            return bad("run.diag_interval", "must be >= 1".into());
        }
        if !(r.threshold > 0.0 && r.threshold < 1.0) {
            return bad("run.threshold", format!("must lie in (0, 1), got {}", r.threshold));
        }
        Ok(())
    }

    pub fn build_problem(&self) -> Result<Problem, CliError> {
        let p = &self.problem;
        Ok(match p.kind {
            ProblemKind::Quadratic => make_anisotropic_quadratic(p.dim, p.condition, p.data_seed)?,
            ProblemKind::Logistic => make_logistic(p.dim, p.examples, p.data_seed)?,
            ProblemKind::Mlp => make_mlp(p.dim, &p.hidden, p.examples, p.data_seed)?,
        })
    }

    /// Number of sampling units: coordinates, or blocks in block mode.
    pub fn sampling_units(&self, problem: &Problem) -> Result<usize, CliError> {
        Ok(match self.optimizer.granularity {
            Granularity::Coordinate => problem.dim(),
            Granularity::Block => match self.optimizer.blocks {
                Some(g) => g,
                None => problem
                    .natural_partition()
                    .ok_or_else(|| {
                        CliError::Config(format!(
                            "optimizer.blocks: required for block mode on a {} problem",
                            problem.kind_name()
                        ))
                    })?
                    .num_blocks(),
            },
        })
    }

    pub fn optimizer_config(&self, problem: &Problem, seed: u64) -> Result<OptimizerConfig, CliError> {
        let n = self.sampling_units(problem)? as f64;
        let o = &self.optimizer;
        let b = &self.budget;
        let budget = match b.kind {
            BudgetKind::Fixed => BudgetSpec::Fixed(
                b.value
                    .or(b.fraction.map(|f| f * n))
                    .expect("validated fixed budget"),
            ),
            BudgetKind::Adaptive => {
                let d = BudgetPolicy::default_for(n as usize);
                BudgetSpec::Adaptive(BudgetPolicy {
                    b_min: b.b_min.unwrap_or(d.b_min),
                    b_max: b.b_max.unwrap_or(d.b_max),
                    alpha: b.alpha.unwrap_or(d.alpha),
                })
            }
        };
        let mut c = OptimizerConfig::new(o.mode, o.eta.unwrap_or(f64::NAN), o.steps, seed);
        c.granularity = o.granularity;
        c.blocks = o.blocks;
        c.stepsize_rule = o.stepsize_rule;
        c.eps = o.eps;
        c.beta = o.beta;
        c.budget = Some(budget);
        c.budget_interval = o.budget_interval;
        c.floor = o.floor;
        c.clip = o.clip;
        c.unselected = o.unselected;
        c.path = o.path;
        c.batch_size = o.batch_size;
        c.diag_interval = self.run.diag_interval;
        c.record_wall_time = self.run.record_wall_time;
        c.validate()?;
        Ok(c)
    }
}

/// Parses a command-line value as a TOML scalar, falling back to a string.
pub fn parse_scalar(raw: &str) -> toml::Value {
    let raw = raw.trim();
    if let Ok(i) = raw.parse::<i64>() {
        return toml::Value::Integer(i);
    }
    if let Ok(f) = raw.parse::<f64>() {
        return toml::Value::Float(f);
    }
    if let Ok(b) = raw.parse::<bool>() {
        return toml::Value::Boolean(b);
    }
    toml::Value::String(raw.to_string())
}

/// Sets `dotted.key` in a TOML document, creating tables on the way.
pub fn set_dotted(doc: &mut toml::Value, key: &str, value: toml::Value) -> Result<(), CliError> {
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(CliError::Config(format!("invalid key `{key}`")));
    }
    let mut cur = doc;
    for part in &parts[..parts.len() - 1] {
        let table = cur
            .as_table_mut()
            .ok_or_else(|| CliError::Config(format!("`{key}` does not name a table entry")))?;
        cur = table
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(Default::default()));
    }
    let table = cur
        .as_table_mut()
        .ok_or_else(|| CliError::Config(format!("`{key}` does not name a table entry")))?;
    // integers given for float keys are accepted by serde; nothing to coerce
    table.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}
