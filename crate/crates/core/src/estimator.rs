//! Two-point responses and zeroth-order gradient estimators.

use std::cell::Cell;

use serde::{Deserialize, Serialize};

use crate::error::{check_len, CurvzoError, Result};
use crate::perturbation::SparsePerturbation;
use crate::problems::{Minibatch, Objective, Partition};

/// Default perturbation scale.
pub const DEFAULT_EPS: f64 = 1e-3;

/// Central finite difference along one direction.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Response {
    pub delta: f64,
    pub epsilon: f64,
    pub loss_plus: f64,
    pub loss_minus: f64,
}

impl Response {
    /// Midpoint of the two queried losses, an `O(ε²)` estimate of the loss at ω.
    pub fn midpoint_loss(&self) -> f64 {
        0.5 * (self.loss_plus + self.loss_minus)
    }
}

/// `Δ = [ℒ(ω+εv) − ℒ(ω−εv)] / (2ε)` with exactly two loss queries.
///
/// `params` is perturbed in place and restored bit-exactly afterwards: the
/// original values of the touched coordinates are kept aside, so only the
/// support of `v` is copied.
pub fn two_point_response<O: Objective + ?Sized>(
    objective: &O,
    params: &mut [f64],
    v: &[f64],
    eps: f64,
    batch: &Minibatch,
) -> Result<Response> {
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(CurvzoError::invalid(format!("epsilon must be > 0, got {eps}")));
    }
    check_len(params.len(), v.len())?;
    let touched: Vec<(usize, f64)> = v
        .iter()
        .enumerate()
        .filter(|(_, &vi)| vi != 0.0)
        .map(|(i, _)| (i, params[i]))
        .collect();

    for &(i, w) in &touched {
        params[i] = w + eps * v[i];
    }
    let plus = objective.loss(params, batch);
    for &(i, w) in &touched {
        params[i] = w - eps * v[i];
    }
    let minus = objective.loss(params, batch);
    for &(i, w) in &touched {
        params[i] = w;
    }
    debug_assert!(touched
        .iter()
        .all(|&(i, w)| params[i].to_bits() == w.to_bits()));

    let (loss_plus, loss_minus) = (plus?, minus?);
    let delta = (loss_plus - loss_minus) / (2.0 * eps);
    if !delta.is_finite() {
        return Err(CurvzoError::NumericalFailure {
            step: 0,
            detail: format!("non-finite response (losses {loss_plus}, {loss_minus})"),
        });
    }
    Ok(Response {
        delta,
        epsilon: eps,
        loss_plus,
        loss_minus,
    })
}

/// Wraps an objective and counts loss queries.
pub struct CountingObjective<'a, O: ?Sized> {
    inner: &'a O,
    calls: Cell<u64>,
}

impl<'a, O: Objective + ?Sized> CountingObjective<'a, O> {
    pub fn new(inner: &'a O) -> Self {
        Self {
            inner,
            calls: Cell::new(0),
        }
    }

    pub fn calls(&self) -> u64 {
        self.calls.get()
    }
}

impl<O: Objective + ?Sized> Objective for CountingObjective<'_, O> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn loss(&self, params: &[f64], batch: &Minibatch) -> Result<f64> {
        self.calls.set(self.calls.get() + 1);
        self.inner.loss(params, batch)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimateKind {
    DenseSpsa,
    NaiveSparse,
    HtSparse,
    BlockHt,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradientEstimate {
    pub values: Vec<f64>,
    pub kind: EstimateKind,
}

/// `Δ · z` for a dense perturbation.
pub fn dense_spsa(response: &Response, pert: &SparsePerturbation) -> Result<GradientEstimate> {
    if !pert.is_dense() {
        return Err(CurvzoError::invalid(
            "dense SPSA requires an all-ones mask",
        ));
    }
    Ok(GradientEstimate {
        values: pert.z.iter().map(|z| response.delta * z).collect(),
        kind: EstimateKind::DenseSpsa,
    })
}

/// `Δ · v`. Biased: its mean is `diag(π) g + O(ε²)`.
pub fn naive_sparse(response: &Response, pert: &SparsePerturbation) -> GradientEstimate {
    GradientEstimate {
        values: pert.v.iter().map(|v| response.delta * v).collect(),
        kind: EstimateKind::NaiveSparse,
    }
}

/// Horvitz–Thompson estimate `Δ v_i / π_i` on the support, zero elsewhere.
pub fn ht_sparse(
    response: &Response,
    pert: &SparsePerturbation,
    pi: &[f64],
) -> Result<GradientEstimate> {
    check_len(pert.dim(), pi.len())?;
    let mut values = vec![0.0; pert.dim()];
    for i in pert.support() {
        if !(pi[i] > 0.0) {
            return Err(CurvzoError::invalid(format!(
                "coordinate {i} selected with pi = {}",
                pi[i]
            )));
        }
        values[i] = response.delta * pert.v[i] / pi[i];
    }
    Ok(GradientEstimate {
        values,
        kind: EstimateKind::HtSparse,
    })
}

/// Block Horvitz–Thompson estimate `(Δ / π_blk) · m_blk · z_G` per block.
///
/// The block's selection is read from the mask at the block's first index.
/// Per-coordinate arithmetic matches [`ht_sparse`] so singleton blocks give
/// bit-identical results.
pub fn block_ht(
    response: &Response,
    pert: &SparsePerturbation,
    pi_blk: &[f64],
    partition: &Partition,
) -> Result<GradientEstimate> {
    check_len(pert.dim(), partition.dim())?;
    check_len(partition.num_blocks(), pi_blk.len())?;
    let mut values = vec![0.0; pert.dim()];
    for (k, range) in partition.ranges().iter().enumerate() {
        if !pert.mask[range.start] {
            continue;
        }
        if !(pi_blk[k] > 0.0) {
            return Err(CurvzoError::invalid(format!(
                "block {k} selected with pi = {}",
                pi_blk[k]
            )));
        }
        for j in range.clone() {
            values[j] = response.delta * pert.v[j] / pi_blk[k];
        }
    }
    Ok(GradientEstimate {
        values,
        kind: EstimateKind::BlockHt,
    })
}
