//! Linear soft-margin SVM trained by stochastic subgradient descent.
//!
//! Minimizes the primal objective
//!
//! ```text
//! (1/N) Σ max(0, 1 - yᵢ (wᵀxᵢ + b)) + λ ‖w‖²
//! ```
//!
//! with Pegasos-style updates: one shuffled pass per epoch, step size
//! `1 / (2λ t)` (the objective is `2λ`-strongly convex), followed by a
//! projection onto the ball of radius `1 / sqrt(2λ)` that contains the
//! optimum. The returned weights are the epoch-end iterate with the lowest
//! objective, which matters at small λ where single steps are large. The
//! bias is learned as the weight of a constant feature; it is small for the
//! roughly centered data produced by candidate selection.
//! Training is single threaded and fully determined by the dataset and
//! [`SvmConfig::seed`].

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{self, DirectionMeta, GeometryError, SemanticDirection, Space};
use crate::rng;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SvmError {
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("all training labels are {0:+}")]
    SingleClass(i8),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("label {0} is not -1 or +1")]
    InvalidLabel(i8),
    #[error("non-finite feature value")]
    NonFinite,
    #[error("invalid configuration: {0}")]
    InvalidConfig(&'static str),
    #[error("training produced a zero weight vector")]
    Degenerate(#[from] GeometryError),
}

pub type Result<T> = std::result::Result<T, SvmError>;

/// Points of one latent space with ±1 labels, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    dim: usize,
    space: Space,
    features: Vec<f64>,
    labels: Vec<i8>,
}

impl LabeledDataset {
    pub fn new(dim: usize, space: Space) -> Self {
        Self { dim, space, features: Vec::new(), labels: Vec::new() }
    }

    pub fn from_rows<I, V>(dim: usize, space: Space, rows: I) -> Result<Self>
    where
        I: IntoIterator<Item = (V, i8)>,
        V: AsRef<[f64]>,
    {
        let mut ds = Self::new(dim, space);
        for (x, y) in rows {
            ds.push(x.as_ref(), y)?;
        }
        Ok(ds)
    }

    pub fn push(&mut self, x: &[f64], y: i8) -> Result<()> {
        if x.len() != self.dim {
            return Err(SvmError::DimensionMismatch { expected: self.dim, found: x.len() });
        }
        if y != 1 && y != -1 {
            return Err(SvmError::InvalidLabel(y));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(SvmError::NonFinite);
        }
        self.features.extend_from_slice(x);
        self.labels.push(y);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn space(&self) -> Space {
        self.space
    }

    pub fn point(&self, i: usize) -> (&[f64], i8) {
        (&self.features[i * self.dim..(i + 1) * self.dim], self.labels[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[f64], i8)> + '_ {
        self.features.chunks_exact(self.dim.max(1)).zip(self.labels.iter().copied())
    }

    pub fn labels(&self) -> &[i8] {
        &self.labels
    }

    /// Same points with every label negated.
    pub fn flipped(&self) -> Self {
        Self { labels: self.labels.iter().map(|y| -y).collect(), ..self.clone() }
    }

    /// Same labels with every feature vector multiplied by `c`.
    pub fn scaled(&self, c: f64) -> Self {
        Self { features: self.features.iter().map(|x| x * c).collect(), ..self.clone() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SvmConfig {
    pub lambda: f64,
    pub epochs: usize,
    pub seed: u64,
    /// Training stops early once an epoch changes the weights by less than
    /// this fraction of their norm.
    pub tolerance: f64,
}

impl Default for SvmConfig {
    fn default() -> Self {
        Self { lambda: 0.1, epochs: 20, seed: 0, tolerance: 1e-6 }
    }
}

impl SvmConfig {
    pub fn with_seed(self, seed: u64) -> Self {
        Self { seed, ..self }
    }

    fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(SvmError::InvalidConfig("lambda must be positive"));
        }
        if self.epochs == 0 {
            return Err(SvmError::InvalidConfig("epochs must be at least 1"));
        }
        if !(self.tolerance > 0.0) {
            return Err(SvmError::InvalidConfig("tolerance must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedBoundary {
    pub direction: SemanticDirection,
    pub train_accuracy: f64,
    pub val_accuracy: f64,
}

/// Trains a boundary on `train`.
///
/// `val_accuracy` is set to the training accuracy; use
/// [`fit_with_validation`] to score a held-out set.
pub fn fit(train: &LabeledDataset, config: &SvmConfig) -> Result<TrainedBoundary> {
    config.validate()?;
    if train.is_empty() {
        return Err(SvmError::EmptyDataset);
    }
    let first = train.labels[0];
    if train.labels.iter().all(|&y| y == first) {
        return Err(SvmError::SingleClass(first));
    }

    let dim = train.dim;
    let lambda = 2.0 * config.lambda;
    let radius = 1.0 / lambda.sqrt();
    // w[..dim] are feature weights, w[dim] is the bias weight.
    let mut w = vec![0.0; dim + 1];
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut rng = rng::seeded(config.seed);
    let mut t = 0u64;
    let mut best = (f64::INFINITY, w.clone());

    for _ in 0..config.epochs {
        let before = w.clone();
        order.shuffle(&mut rng);
        for &i in &order {
            t += 1;
            let (x, y) = train.point(i);
            let y = f64::from(y);
            let eta = 1.0 / (lambda * t as f64);
            let margin = y * (geometry::dot(&w[..dim], x) + w[dim]);
            let shrink = 1.0 - eta * lambda;
            w.iter_mut().for_each(|wi| *wi *= shrink);
            if margin < 1.0 {
                for (wi, xi) in w[..dim].iter_mut().zip(x) {
                    *wi += eta * y * xi;
                }
                w[dim] += eta * y;
            }
            let n = geometry::norm(&w);
            if n > radius {
                let s = radius / n;
                w.iter_mut().for_each(|wi| *wi *= s);
            }
        }
        let f = objective(train, &w, config.lambda);
        if f < best.0 {
            best = (f, w.clone());
        }
        let delta: f64 = w.iter().zip(&before).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let scale = geometry::norm(&w);
        if scale > 0.0 && delta / scale < config.tolerance {
            break;
        }
    }
    let w = best.1;

    let meta = DirectionMeta { seed: config.seed, train_count: train.len() as u64, val_accuracy: 0.0 };
    let direction = SemanticDirection::from_unnormalized("boundary", &w[..dim], w[dim], train.space, meta)?;
    let mut boundary = TrainedBoundary { direction, train_accuracy: 0.0, val_accuracy: 0.0 };
    boundary.train_accuracy = accuracy(&boundary, train)?;
    boundary.set_val_accuracy(boundary.train_accuracy);
    Ok(boundary)
}

/// Primal objective with the bias treated as a regularized weight.
fn objective(train: &LabeledDataset, w: &[f64], lambda: f64) -> f64 {
    let dim = train.dim;
    let hinge: f64 = train
        .iter()
        .map(|(x, y)| (1.0 - f64::from(y) * (geometry::dot(&w[..dim], x) + w[dim])).max(0.0))
        .sum();
    hinge / train.len() as f64 + lambda * geometry::dot(w, w)
}

/// Trains on `train` and records the accuracy on `validation`.
pub fn fit_with_validation(
    train: &LabeledDataset,
    validation: &LabeledDataset,
    config: &SvmConfig,
) -> Result<TrainedBoundary> {
    let mut b = fit(train, config)?;
    let val = accuracy(&b, validation)?;
    b.set_val_accuracy(val);
    Ok(b)
}

impl TrainedBoundary {
    fn set_val_accuracy(&mut self, val: f64) {
        self.val_accuracy = val;
        let meta = DirectionMeta { val_accuracy: val, ..self.direction.meta().clone() };
        self.direction = self.direction.clone().with_meta(meta);
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.direction = self.direction.with_name(name);
        self
    }
}

/// `sign(nᵀz + b)` with ties resolved to `+1`.
pub fn classify(b: &TrainedBoundary, z: &[f64]) -> Result<i8> {
    let d = b.direction.dim();
    if z.len() != d {
        return Err(SvmError::DimensionMismatch { expected: d, found: z.len() });
    }
    let v = geometry::dot(b.direction.normal(), z) + b.direction.intercept();
    Ok(if v >= 0.0 { 1 } else { -1 })
}

/// Fraction of `data` classified correctly.
pub fn accuracy(b: &TrainedBoundary, data: &LabeledDataset) -> Result<f64> {
    if data.is_empty() {
        return Err(SvmError::EmptyDataset);
    }
    let mut correct = 0usize;
    for (x, y) in data.iter() {
        if classify(b, x)? == y {
            correct += 1;
        }
    }
    Ok(correct as f64 / data.len() as f64)
}
