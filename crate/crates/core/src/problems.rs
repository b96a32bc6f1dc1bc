//! Desk-scale objectives with exact loss, gradient and diagonal Fisher.
//!
//! Three kinds are provided:
//!
//! * `quadratic`: `½ ωᵀAω + bᵀω` with `A` symmetric PSD (diagonal or dense).
//!   There is no data, so the diagonal Fisher is defined as `g_i(ω)²`, the
//!   single-sample Fisher at the evaluation point.
//! * `logistic`: binary cross-entropy of a linear model on synthetic data.
//! * `mlp`: binary cross-entropy of a small tanh network (≤ 2 hidden layers).
//!
//! Every stochastic quantity the optimizer produces can be checked against
//! these exact values.

use std::ops::Range;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::seq::{index, SliceRandom};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, CurvzoError, Result};
use crate::perturbation::{Phase, SeedState};

/// Ordered disjoint index ranges covering `0..dim`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "PartitionRepr", into = "PartitionRepr")]
pub struct Partition {
    ranges: Vec<Range<usize>>,
    dim: usize,
}

#[derive(Serialize, Deserialize)]
struct PartitionRepr {
    dim: usize,
    bounds: Vec<(usize, usize)>,
}

impl TryFrom<PartitionRepr> for Partition {
    type Error = CurvzoError;

    fn try_from(r: PartitionRepr) -> Result<Self> {
        Partition::new(r.bounds.into_iter().map(|(a, b)| a..b).collect(), r.dim)
    }
}

impl From<Partition> for PartitionRepr {
    fn from(p: Partition) -> Self {
        PartitionRepr {
            dim: p.dim,
            bounds: p.ranges.iter().map(|r| (r.start, r.end)).collect(),
        }
    }
}

impl Partition {
    /// Validates that `ranges` are non-empty, disjoint, ordered and cover `0..dim`.
    pub fn new(ranges: Vec<Range<usize>>, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(CurvzoError::invalid("partition dimension must be >= 1"));
        }
        let mut next = 0;
        for (k, r) in ranges.iter().enumerate() {
            if r.start != next {
                return Err(CurvzoError::invalid(format!(
                    "block {k} starts at {} but {next} is the first uncovered index",
                    r.start
                )));
            }
            if r.is_empty() {
                return Err(CurvzoError::invalid(format!("block {k} is empty")));
            }
            next = r.end;
        }
        if next != dim {
            return Err(CurvzoError::invalid(format!(
                "partition covers 0..{next}, expected 0..{dim}"
            )));
        }
        Ok(Self { ranges, dim })
    }

    pub fn singletons(dim: usize) -> Self {
        Self {
            ranges: (0..dim).map(|i| i..i + 1).collect(),
            dim,
        }
    }

    /// `blocks` contiguous ranges whose sizes differ by at most one.
    pub fn equal(dim: usize, blocks: usize) -> Result<Self> {
        if blocks == 0 || blocks > dim {
            return Err(CurvzoError::invalid(format!(
                "cannot split {dim} coordinates into {blocks} blocks"
            )));
        }
        let base = dim / blocks;
        let extra = dim % blocks;
        let mut ranges = Vec::with_capacity(blocks);
        let mut start = 0;
        for k in 0..blocks {
            let len = base + usize::from(k < extra);
            ranges.push(start..start + len);
            start += len;
        }
        Self::new(ranges, dim)
    }

    pub fn ranges(&self) -> &[Range<usize>] {
        &self.ranges
    }

    pub fn num_blocks(&self) -> usize {
        self.ranges.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
}

/// Flat parameter vector with an optional block partition.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParameterState {
    pub values: Vec<f64>,
    pub partition: Option<Partition>,
}

impl ParameterState {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(CurvzoError::invalid("parameter dimension must be >= 1"));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(CurvzoError::invalid(format!(
                "parameter {i} is not finite ({})",
                values[i]
            )));
        }
        Ok(Self {
            values,
            partition: None,
        })
    }

    pub fn with_partition(mut self, partition: Partition) -> Result<Self> {
        check_len(self.values.len(), partition.dim())?;
        self.partition = Some(partition);
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

/// Dataset rows used for one loss evaluation.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Minibatch {
    Full,
    Indices(Vec<usize>),
}

impl Minibatch {
    /// Uniform sample without replacement; the full dataset when
    /// `batch_size >= n` or the problem has no data.
    pub fn sample(seed: SeedState, n: usize, batch_size: usize) -> Self {
        if n == 0 || batch_size == 0 || batch_size >= n {
            return Minibatch::Full;
        }
        let mut rng = seed.rng();
        Minibatch::Indices(index::sample(&mut rng, n, batch_size).into_vec())
    }

    pub fn size(&self, n: usize) -> usize {
        match self {
            Minibatch::Full => n,
            Minibatch::Indices(ix) => ix.len(),
        }
    }

    fn rows(&self, n: usize) -> Result<Box<dyn Iterator<Item = usize> + '_>> {
        match self {
            Minibatch::Full => Ok(Box::new(0..n)),
            Minibatch::Indices(ix) => {
                if let Some(&bad) = ix.iter().find(|&&i| i >= n) {
                    return Err(CurvzoError::invalid(format!(
                        "minibatch index {bad} out of bounds for {n} examples"
                    )));
                }
                if ix.is_empty() {
                    return Err(CurvzoError::invalid("empty minibatch"));
                }
                Ok(Box::new(ix.iter().copied()))
            }
        }
    }
}

/// Anything that can be queried for a scalar loss.
pub trait Objective {
    fn dim(&self) -> usize;
    fn loss(&self, params: &[f64], batch: &Minibatch) -> Result<f64>;
}

/// Symmetric PSD matrix of a quadratic objective.
#[derive(Clone, Debug, PartialEq)]
pub enum QuadMatrix {
    Diagonal(Vec<f64>),
    Dense(DMatrix<f64>),
}

impl QuadMatrix {
    fn dim(&self) -> usize {
        match self {
            QuadMatrix::Diagonal(a) => a.len(),
            QuadMatrix::Dense(a) => a.nrows(),
        }
    }

    fn apply(&self, w: &[f64]) -> Vec<f64> {
        match self {
            QuadMatrix::Diagonal(a) => a.iter().zip(w).map(|(a, w)| a * w).collect(),
            QuadMatrix::Dense(a) => {
                let n = a.nrows();
                (0..n)
                    .map(|i| (0..n).map(|j| a[(i, j)] * w[j]).sum())
                    .collect()
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Quadratic {
    pub a: QuadMatrix,
    pub b: Vec<f64>,
}

impl Quadratic {
    pub fn new(a: QuadMatrix, b: Vec<f64>) -> Result<Self> {
        let d = a.dim();
        if d == 0 {
            return Err(CurvzoError::invalid("quadratic dimension must be >= 1"));
        }
        check_len(d, b.len())?;
        match &a {
            QuadMatrix::Diagonal(diag) => {
                if let Some(i) = diag.iter().position(|&x| !(x >= 0.0 && x.is_finite())) {
                    return Err(CurvzoError::invalid(format!(
                        "diagonal entry {i} = {} is not a finite nonnegative value",
                        diag[i]
                    )));
                }
            }
            QuadMatrix::Dense(m) => {
                if m.ncols() != m.nrows() {
                    return Err(CurvzoError::invalid("quadratic matrix must be square"));
                }
                let scale = m.iter().fold(0.0f64, |acc, x| acc.max(x.abs())).max(1.0);
                if (m - m.transpose()).iter().any(|x| x.abs() > 1e-12 * scale) {
                    return Err(CurvzoError::invalid("quadratic matrix must be symmetric"));
                }
                let min_eig = SymmetricEigen::new(m.clone()).eigenvalues.min();
                if min_eig < -1e-10 * scale {
                    return Err(CurvzoError::invalid(format!(
                        "quadratic matrix is not PSD (min eigenvalue {min_eig})"
                    )));
                }
            }
        }
        Ok(Self { a, b })
    }

    pub fn diagonal(a: Vec<f64>, b: Vec<f64>) -> Result<Self> {
        Self::new(QuadMatrix::Diagonal(a), b)
    }
}

/// Linear binary classifier with cross-entropy loss.
#[derive(Clone, Debug, PartialEq)]
pub struct Logistic {
    pub dim: usize,
    /// Row-major `n × dim`.
    pub inputs: Vec<f64>,
    pub labels: Vec<f64>,
}

/// Tanh network with a single logistic output.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub inputs: Vec<f64>,
    pub labels: Vec<f64>,
}

pub const MLP_MAX_HIDDEN_LAYERS: usize = 2;
pub const MLP_MAX_UNITS: usize = 64;
pub const MLP_MAX_PARAMS: usize = 5_000;

impl Mlp {
    /// `(fan_in, fan_out)` per layer, output layer last.
    fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let mut shapes = Vec::with_capacity(self.hidden.len() + 1);
        let mut fan_in = self.input_dim;
        for &h in &self.hidden {
            shapes.push((fan_in, h));
            fan_in = h;
        }
        shapes.push((fan_in, 1));
        shapes
    }

    pub fn num_params(&self) -> usize {
        self.layer_shapes()
            .iter()
            .map(|(i, o)| i * o + o)
            .sum()
    }

    /// One block per weight matrix and per bias vector.
    pub fn tensor_partition(&self) -> Partition {
        let mut ranges = Vec::new();
        let mut start = 0;
        for (i, o) in self.layer_shapes() {
            ranges.push(start..start + i * o);
            start += i * o;
            ranges.push(start..start + o);
            start += o;
        }
        Partition::new(ranges, start).expect("layer shapes are non-empty")
    }

    fn len(&self) -> usize {
        self.labels.len()
    }

    fn input(&self, k: usize) -> &[f64] {
        &self.inputs[k * self.input_dim..(k + 1) * self.input_dim]
    }

    /// Logit and per-layer activations (input included) for one example.
    fn forward(&self, params: &[f64], x: &[f64]) -> (f64, Vec<Vec<f64>>) {
        let shapes = self.layer_shapes();
        let mut acts = vec![x.to_vec()];
        let mut offset = 0;
        let mut logit = 0.0;
        for (layer, &(fan_in, fan_out)) in shapes.iter().enumerate() {
            let w = &params[offset..offset + fan_in * fan_out];
            let b = &params[offset + fan_in * fan_out..offset + fan_in * fan_out + fan_out];
            offset += fan_in * fan_out + fan_out;
            let h = acts.last().expect("input present");
            let pre: Vec<f64> = (0..fan_out)
                .map(|o| {
                    let row = &w[o * fan_in..(o + 1) * fan_in];
                    row.iter().zip(h).map(|(a, b)| a * b).sum::<f64>() + b[o]
                })
                .collect();
            if layer + 1 == shapes.len() {
                logit = pre[0];
            } else {
                acts.push(pre.into_iter().map(f64::tanh).collect());
            }
        }
        (logit, acts)
    }

    /// Adds `scale · ∂ℓ/∂ω` for one example into `grad`.
    fn accumulate_gradient(&self, params: &[f64], k: usize, scale: f64, grad: &mut [f64]) {
        let shapes = self.layer_shapes();
        let (logit, acts) = self.forward(params, self.input(k));
        let mut offsets = Vec::with_capacity(shapes.len());
        let mut offset = 0;
        for &(i, o) in &shapes {
            offsets.push(offset);
            offset += i * o + o;
        }
        // dℓ/d(pre-activation) of the current layer
        let mut delta = vec![sigmoid(logit) - self.labels[k]];
        for layer in (0..shapes.len()).rev() {
            let (fan_in, fan_out) = shapes[layer];
            let off = offsets[layer];
            let h = &acts[layer];
            for o in 0..fan_out {
                let d = delta[o] * scale;
                for j in 0..fan_in {
                    grad[off + o * fan_in + j] += d * h[j];
                }
                grad[off + fan_in * fan_out + o] += d;
            }
            if layer > 0 {
                let w = &params[off..off + fan_in * fan_out];
                delta = (0..fan_in)
                    .map(|j| {
                        let back: f64 = (0..fan_out).map(|o| w[o * fan_in + j] * delta[o]).sum();
                        back * (1.0 - h[j] * h[j])
                    })
                    .collect();
            }
        }
    }
}

/// A desk-scale objective with exact derivatives.
#[derive(Clone, Debug, PartialEq)]
pub enum Problem {
    Quadratic(Quadratic),
    Logistic(Logistic),
    Mlp(Mlp),
}

fn sigmoid(u: f64) -> f64 {
    if u >= 0.0 {
        1.0 / (1.0 + (-u).exp())
    } else {
        let e = u.exp();
        e / (1.0 + e)
    }
}

/// `−y log σ(u) − (1−y) log(1−σ(u))`, computed without overflow.
fn cross_entropy(logit: f64, label: f64) -> f64 {
    let softplus = logit.max(0.0) + (-logit.abs()).exp().ln_1p();
    softplus - label * logit
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl Problem {
    pub fn kind_name(&self) -> &'static str {
        match self {
            Problem::Quadratic(_) => "quadratic",
            Problem::Logistic(_) => "logistic",
            Problem::Mlp(_) => "mlp",
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Problem::Quadratic(q) => q.a.dim(),
            Problem::Logistic(l) => l.dim,
            Problem::Mlp(m) => m.num_params(),
        }
    }

    pub fn num_examples(&self) -> usize {
        match self {
            Problem::Quadratic(_) => 0,
            Problem::Logistic(l) => l.labels.len(),
            Problem::Mlp(m) => m.len(),
        }
    }

    /// Natural block structure, if the problem has one.
    pub fn natural_partition(&self) -> Option<Partition> {
        match self {
            Problem::Mlp(m) => Some(m.tensor_partition()),
            _ => None,
        }
    }

    fn check_params(&self, params: &[f64]) -> Result<()> {
        check_len(self.dim(), params.len())
    }

    pub fn loss(&self, params: &[f64], batch: &Minibatch) -> Result<f64> {
        self.check_params(params)?;
        match self {
            Problem::Quadratic(q) => {
                let aw = q.a.apply(params);
                Ok(0.5 * dot(params, &aw) + dot(&q.b, params))
            }
            Problem::Logistic(l) => {
                let n = l.labels.len();
                let mut total = 0.0;
                let mut count = 0usize;
                for k in batch.rows(n)? {
                    let x = &l.inputs[k * l.dim..(k + 1) * l.dim];
                    total += cross_entropy(dot(x, params), l.labels[k]);
                    count += 1;
                }
                Ok(total / count as f64)
            }
            Problem::Mlp(m) => {
                let mut total = 0.0;
                let mut count = 0usize;
                for k in batch.rows(m.len())? {
                    let (logit, _) = m.forward(params, m.input(k));
                    total += cross_entropy(logit, m.labels[k]);
                    count += 1;
                }
                Ok(total / count as f64)
            }
        }
    }

    /// Analytic gradient of [`Problem::loss`] on `batch`.
    pub fn exact_gradient(&self, params: &[f64], batch: &Minibatch) -> Result<Vec<f64>> {
        self.check_params(params)?;
        match self {
            Problem::Quadratic(q) => {
                let mut g = q.a.apply(params);
                for (g, b) in g.iter_mut().zip(&q.b) {
                    *g += b;
                }
                Ok(g)
            }
            Problem::Logistic(l) => {
                let n = l.labels.len();
                let rows: Vec<usize> = batch.rows(n)?.collect();
                let scale = 1.0 / rows.len() as f64;
                let mut g = vec![0.0; l.dim];
                for k in rows {
                    let x = &l.inputs[k * l.dim..(k + 1) * l.dim];
                    let r = (sigmoid(dot(x, params)) - l.labels[k]) * scale;
                    for (g, x) in g.iter_mut().zip(x) {
                        *g += r * x;
                    }
                }
                Ok(g)
            }
            Problem::Mlp(m) => {
                let rows: Vec<usize> = batch.rows(m.len())?.collect();
                let scale = 1.0 / rows.len() as f64;
                let mut g = vec![0.0; m.num_params()];
                for k in rows {
                    m.accumulate_gradient(params, k, scale, &mut g);
                }
                Ok(g)
            }
        }
    }

    /// Dataset mean of squared per-example gradient components.
    ///
    /// The quadratic has no data; its Fisher is `g_i(ω)²`.
    pub fn exact_fisher_diagonal(&self, params: &[f64]) -> Result<Vec<f64>> {
        self.check_params(params)?;
        let n = self.num_examples();
        if n == 0 {
            let g = self.exact_gradient(params, &Minibatch::Full)?;
            return Ok(g.into_iter().map(|g| g * g).collect());
        }
        let d = self.dim();
        let mut fisher = vec![0.0; d];
        let mut per = vec![0.0; d];
        for k in 0..n {
            per.fill(0.0);
            match self {
                Problem::Logistic(l) => {
                    let x = &l.inputs[k * l.dim..(k + 1) * l.dim];
                    let r = sigmoid(dot(x, params)) - l.labels[k];
                    for (p, x) in per.iter_mut().zip(x) {
                        *p = r * x;
                    }
                }
                Problem::Mlp(m) => m.accumulate_gradient(params, k, 1.0, &mut per),
                Problem::Quadratic(_) => unreachable!("quadratic has no examples"),
            }
            for (f, p) in fisher.iter_mut().zip(&per) {
                *f += p * p;
            }
        }
        for f in &mut fisher {
            *f /= n as f64;
        }
        Ok(fisher)
    }

    /// Largest eigenvalue of `A` (quadratics only).
    pub fn smoothness_constant(&self) -> Result<f64> {
        match self {
            Problem::Quadratic(q) => Ok(match &q.a {
                QuadMatrix::Diagonal(a) => a.iter().copied().fold(0.0, f64::max),
                QuadMatrix::Dense(m) => SymmetricEigen::new(m.clone()).eigenvalues.max(),
            }),
            other => Err(CurvzoError::UnsupportedKind {
                op: "smoothness_constant",
                kind: other.kind_name(),
            }),
        }
    }

    /// Conventional starting point: all ones for quadratics, zeros otherwise.
    pub fn default_init(&self) -> Vec<f64> {
        match self {
            Problem::Quadratic(_) => vec![1.0; self.dim()],
            Problem::Logistic(_) => vec![0.0; self.dim()],
            Problem::Mlp(m) => {
                // symmetric zeros would leave hidden units identical
                let mut rng = SeedState::new(0x6d6c70, 0, Phase::Oracle, 0).rng();
                let mut w = Vec::with_capacity(m.num_params());
                for (fan_in, fan_out) in m.layer_shapes() {
                    let s = 1.0 / (fan_in as f64).sqrt();
                    w.extend((0..fan_in * fan_out).map(|_| s * rng.sample::<f64, _>(StandardNormal)));
                    w.extend(std::iter::repeat_n(0.0, fan_out));
                }
                w
            }
        }
    }
}

impl Objective for Problem {
    fn dim(&self) -> usize {
        Problem::dim(self)
    }

    fn loss(&self, params: &[f64], batch: &Minibatch) -> Result<f64> {
        Problem::loss(self, params, batch)
    }
}

/// Diagonal quadratic with eigenvalues log-spaced in `[1, condition]`,
/// shuffled by `seed`, and `b = 0`.
pub fn make_anisotropic_quadratic(d: usize, condition: f64, seed: u64) -> Result<Problem> {
    if d == 0 {
        return Err(CurvzoError::invalid("dimension must be >= 1"));
    }
    if !(condition >= 1.0 && condition.is_finite()) {
        return Err(CurvzoError::invalid(format!(
            "condition number must be a finite value >= 1, got {condition}"
        )));
    }
    let mut eig: Vec<f64> = (0..d)
        .map(|k| {
            if d == 1 {
                1.0
            } else {
                condition.powf(k as f64 / (d - 1) as f64)
            }
        })
        .collect();
    let mut rng = SeedState::new(seed, 0, Phase::Oracle, 0).rng();
    eig.shuffle(&mut rng);
    Ok(Problem::Quadratic(Quadratic::diagonal(eig, vec![0.0; d])?))
}

/// Standard-normal inputs with labels drawn from a planted weight vector.
fn synthetic_classification(input_dim: usize, n: usize, seed: u64) -> (Vec<f64>, Vec<f64>) {
    let mut rng = SeedState::new(seed, 0, Phase::Oracle, 1).rng();
    let planted: Vec<f64> = (0..input_dim)
        .map(|_| 2.0 * rng.sample::<f64, _>(StandardNormal) / (input_dim as f64).sqrt())
        .collect();
    let inputs: Vec<f64> = (0..n * input_dim)
        .map(|_| rng.sample::<f64, _>(StandardNormal))
        .collect();
    let labels = (0..n)
        .map(|k| {
            let p = sigmoid(dot(&inputs[k * input_dim..(k + 1) * input_dim], &planted));
            f64::from(u8::from(rng.gen::<f64>() < p))
        })
        .collect();
    (inputs, labels)
}

pub fn make_logistic(d: usize, examples: usize, seed: u64) -> Result<Problem> {
    if d == 0 || examples == 0 {
        return Err(CurvzoError::invalid(
            "logistic problem needs d >= 1 and at least one example",
        ));
    }
    let (inputs, labels) = synthetic_classification(d, examples, seed);
    Ok(Problem::Logistic(Logistic {
        dim: d,
        inputs,
        labels,
    }))
}

pub fn make_mlp(input_dim: usize, hidden: &[usize], examples: usize, seed: u64) -> Result<Problem> {
    if input_dim == 0 || examples == 0 {
        return Err(CurvzoError::invalid(
            "mlp problem needs input_dim >= 1 and at least one example",
        ));
    }
    if hidden.len() > MLP_MAX_HIDDEN_LAYERS {
        return Err(CurvzoError::invalid(format!(
            "mlp supports at most {MLP_MAX_HIDDEN_LAYERS} hidden layers"
        )));
    }
    if let Some(&h) = hidden.iter().find(|&&h| h == 0 || h > MLP_MAX_UNITS) {
        return Err(CurvzoError::invalid(format!(
            "hidden width {h} outside 1..={MLP_MAX_UNITS}"
        )));
    }
    let (inputs, labels) = synthetic_classification(input_dim, examples, seed);
    let mlp = Mlp {
        input_dim,
        hidden: hidden.to_vec(),
        inputs,
        labels,
    };
    if mlp.num_params() > MLP_MAX_PARAMS {
        return Err(CurvzoError::invalid(format!(
            "mlp has {} parameters, limit is {MLP_MAX_PARAMS}",
            mlp.num_params()
        )));
    }
    Ok(Problem::Mlp(mlp))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn diag(a: &[f64], b: &[f64]) -> Problem {
        Problem::Quadratic(Quadratic::diagonal(a.to_vec(), b.to_vec()).unwrap())
    }

    fn central_differences(p: &Problem, w: &[f64], h: f64) -> Vec<f64> {
        let mut w = w.to_vec();
        (0..w.len())
            .map(|i| {
                let orig = w[i];
                w[i] = orig + h;
                let up = p.loss(&w, &Minibatch::Full).unwrap();
                w[i] = orig - h;
                let down = p.loss(&w, &Minibatch::Full).unwrap();
                w[i] = orig;
                (up - down) / (2.0 * h)
            })
            .collect()
    }

    #[test]
    fn quadratic_loss_examples() {
        let p = diag(&[1.0, 1.0], &[0.0, 0.0]);
        assert_eq!(p.loss(&[3.0, 4.0], &Minibatch::Full).unwrap(), 12.5);
        let p = diag(&[2.0, 8.0], &[0.0, 0.0]);
        assert_eq!(p.loss(&[1.0, 1.0], &Minibatch::Full).unwrap(), 5.0);
        assert_eq!(p.exact_gradient(&[1.0, 1.0], &Minibatch::Full).unwrap(), vec![2.0, 8.0]);
        assert_eq!(p.exact_fisher_diagonal(&[1.0, 1.0]).unwrap(), vec![4.0, 64.0]);
        let p = diag(&[1.0, 1.0], &[1.0, -1.0]);
        assert_eq!(p.exact_gradient(&[0.0, 0.0], &Minibatch::Full).unwrap(), vec![1.0, -1.0]);
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let p = diag(&[1.0, 1.0], &[0.0, 0.0]);
        assert!(matches!(
            p.loss(&[1.0], &Minibatch::Full),
            Err(CurvzoError::DimensionMismatch { expected: 2, found: 1 })
        ));
        assert!(p.exact_gradient(&[1.0; 3], &Minibatch::Full).is_err());
        assert!(p.exact_fisher_diagonal(&[1.0; 3]).is_err());
    }

    #[test]
    fn logistic_at_origin_is_ln2() {
        let p = make_logistic(4, 32, 3).unwrap();
        let l = p.loss(&[0.0; 4], &Minibatch::Full).unwrap();
        assert!((l - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn logistic_fisher_at_origin() {
        let p = make_logistic(4, 32, 3).unwrap();
        let Problem::Logistic(l) = &p else { unreachable!() };
        let mut expected = [0.0; 4];
        for k in 0..32 {
            let r = 0.5 - l.labels[k];
            for i in 0..4 {
                expected[i] += (r * l.inputs[k * 4 + i]).powi(2) / 32.0;
            }
        }
        let f = p.exact_fisher_diagonal(&[0.0; 4]).unwrap();
        for (a, b) in f.iter().zip(expected) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn fisher_matches_per_example_gradients() {
        let problems = [
            make_logistic(5, 40, 1).unwrap(),
            make_mlp(3, &[4, 3], 24, 2).unwrap(),
        ];
        for p in &problems {
            let w: Vec<f64> = p.default_init().iter().map(|x| x + 0.1).collect();
            let n = p.num_examples();
            let mut mean = vec![0.0; p.dim()];
            for k in 0..n {
                let g = p.exact_gradient(&w, &Minibatch::Indices(vec![k])).unwrap();
                for (m, g) in mean.iter_mut().zip(g) {
                    *m += g * g / n as f64;
                }
            }
            let f = p.exact_fisher_diagonal(&w).unwrap();
            for (a, b) in f.iter().zip(&mean) {
                assert!(*a >= 0.0);
                assert!((a - b).abs() <= 1e-14 * b.abs().max(1.0), "{a} vs {b}");
            }
        }
    }

    #[test]
    fn gradients_match_central_differences() {
        let logistic = make_logistic(6, 50, 4).unwrap();
        let w = vec![0.3, -0.2, 0.1, 0.5, -0.4, 0.05];
        let fd = central_differences(&logistic, &w, 1e-5);
        let g = logistic.exact_gradient(&w, &Minibatch::Full).unwrap();
        for (a, b) in g.iter().zip(&fd) {
            assert!((a - b).abs() <= 1e-6 * a.abs().max(1e-3), "{a} vs {b}");
        }

        let mlp = make_mlp(3, &[5], 20, 5).unwrap();
        let w = mlp.default_init();
        let fd = central_differences(&mlp, &w, 1e-4);
        let g = mlp.exact_gradient(&w, &Minibatch::Full).unwrap();
        for (a, b) in g.iter().zip(&fd) {
            assert!((a - b).abs() <= 1e-4 * a.abs().max(1e-2), "{a} vs {b}");
        }
    }

    #[test]
    fn minibatch_loss_uses_rows() {
        let p = make_logistic(3, 10, 0).unwrap();
        let w = [0.2, 0.1, -0.3];
        let full = p.loss(&w, &Minibatch::Full).unwrap();
        let all = p.loss(&w, &Minibatch::Indices((0..10).collect())).unwrap();
        assert!((full - all).abs() < 1e-15);
        assert!(p.loss(&w, &Minibatch::Indices(vec![10])).is_err());
    }

    #[test]
    fn minibatch_sample_is_deterministic() {
        let s = SeedState::new(1, 3, Phase::Batch, 0);
        let a = Minibatch::sample(s, 100, 8);
        assert_eq!(a, Minibatch::sample(s, 100, 8));
        assert_eq!(a.size(100), 8);
        assert_eq!(Minibatch::sample(s, 100, 200), Minibatch::Full);
        assert_eq!(Minibatch::sample(s, 0, 8), Minibatch::Full);
    }

    #[test]
    fn smoothness_constants() {
        assert_eq!(diag(&[2.0, 8.0], &[0.0, 0.0]).smoothness_constant().unwrap(), 8.0);
        assert_eq!(diag(&[1.0; 5], &[0.0; 5]).smoothness_constant().unwrap(), 1.0);
        assert!(matches!(
            make_logistic(2, 4, 0).unwrap().smoothness_constant(),
            Err(CurvzoError::UnsupportedKind { .. })
        ));
    }

    #[test]
    fn dense_smoothness_from_rotated_spectrum() {
        // A = Q diag(1,3,5) Qᵀ with Q a product of two plane rotations
        let (c1, s1) = (0.6f64, 0.8f64);
        let (c2, s2) = (0.28f64, 0.96f64);
        let r1 = DMatrix::from_row_slice(3, 3, &[c1, -s1, 0.0, s1, c1, 0.0, 0.0, 0.0, 1.0]);
        let r2 = DMatrix::from_row_slice(3, 3, &[1.0, 0.0, 0.0, 0.0, c2, -s2, 0.0, s2, c2]);
        let q = r1 * r2;
        let a = &q * DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![1.0, 3.0, 5.0])) * q.transpose();
        let a = (&a + a.transpose()) * 0.5;
        let p = Problem::Quadratic(Quadratic::new(QuadMatrix::Dense(a), vec![0.0; 3]).unwrap());
        assert!((p.smoothness_constant().unwrap() - 5.0).abs() < 1e-12);
        let w = [0.3, -1.0, 2.0];
        let fd = central_differences(&p, &w, 1e-5);
        let g = p.exact_gradient(&w, &Minibatch::Full).unwrap();
        for (a, b) in g.iter().zip(fd) {
            assert!((a - b).abs() < 1e-8);
        }
    }

    #[test]
    fn rejects_non_psd_and_asymmetric() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(Quadratic::new(QuadMatrix::Dense(m), vec![0.0; 2]).is_err());
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert!(Quadratic::new(QuadMatrix::Dense(m), vec![0.0; 2]).is_err());
        assert!(Quadratic::diagonal(vec![-1.0], vec![0.0]).is_err());
    }

    #[test]
    fn anisotropic_quadratic_spectrum() {
        let Problem::Quadratic(q) = make_anisotropic_quadratic(4, 1.0, 9).unwrap() else { unreachable!() };
        assert_eq!(q.a, QuadMatrix::Diagonal(vec![1.0; 4]));

        let Problem::Quadratic(q) = make_anisotropic_quadratic(3, 100.0, 9).unwrap() else { unreachable!() };
        let QuadMatrix::Diagonal(mut a) = q.a else { unreachable!() };
        a.sort_by(f64::total_cmp);
        for (x, y) in a.iter().zip([1.0, 10.0, 100.0]) {
            assert!((x - y).abs() < 1e-12);
        }

        assert_eq!(
            make_anisotropic_quadratic(50, 1e4, 3).unwrap(),
            make_anisotropic_quadratic(50, 1e4, 3).unwrap()
        );
        assert!(make_anisotropic_quadratic(3, 0.5, 0).is_err());
        assert!(make_anisotropic_quadratic(0, 2.0, 0).is_err());
    }

    #[test]
    fn partition_validation() {
        assert!(Partition::new(vec![0..2, 2..3], 3).is_ok());
        assert!(Partition::new(vec![0..2, 1..3], 3).is_err());
        assert!(Partition::new(vec![0..2, 2..2, 2..3], 3).is_err());
        assert!(Partition::new(vec![0..2], 3).is_err());
        let p = Partition::equal(10, 3).unwrap();
        assert_eq!(p.ranges(), &[0..4, 4..7, 7..10]);
        assert!(Partition::equal(3, 4).is_err());
        let json = serde_json::to_string(&p).unwrap();
        assert_eq!(serde_json::from_str::<Partition>(&json).unwrap(), p);
    }

    #[test]
    fn mlp_limits() {
        assert!(make_mlp(4, &[8, 8, 8], 10, 0).is_err());
        assert!(make_mlp(4, &[65], 10, 0).is_err());
        assert!(make_mlp(100, &[64, 64], 10, 0).is_err());
        let p = make_mlp(4, &[8], 10, 0).unwrap();
        assert_eq!(p.dim(), 4 * 8 + 8 + 8 + 1);
        assert_eq!(p.natural_partition().unwrap().num_blocks(), 4);
    }

    #[test]
    fn parameter_state_invariants() {
        assert!(ParameterState::new(vec![]).is_err());
        assert!(ParameterState::new(vec![f64::NAN]).is_err());
        let s = ParameterState::new(vec![0.0; 3]).unwrap();
        assert!(s.clone().with_partition(Partition::singletons(2)).is_err());
        assert!(s.with_partition(Partition::singletons(3)).is_ok());
    }
}
