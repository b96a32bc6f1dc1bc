//! Curvature-guided sparse zeroth-order optimization.
//!
//! Each step draws a sparse Gaussian direction whose coordinate (or block)
//! inclusion probabilities follow running curvature scores, queries the loss
//! twice, and applies an inverse-probability-weighted update.

pub mod curvature;
pub mod error;
pub mod estimator;
pub mod optimizer;
pub mod oracle;
pub mod perturbation;
pub mod problems;
pub mod sampler;

pub use curvature::{score_stats, CurvatureScores, ScoreMode, ScoreStats};
pub use error::{CurvzoError, Result};
pub use estimator::{two_point_response, GradientEstimate, Response};
pub use optimizer::{
    run, BudgetSpec, Checkpoint, Granularity, Mode, OptimizerConfig, StepRecord, Trainer,
    TrainerState,
};
pub use perturbation::{Phase, SeedState, SparsePerturbation};
pub use problems::{Minibatch, Objective, Partition, Problem};
pub use sampler::{variance_minimizing_pi, BudgetPolicy, ClipRule, SamplingPlan};
