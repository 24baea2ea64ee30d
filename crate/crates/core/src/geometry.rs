//! Vector geometry of the latent space.
//!
//! A semantic boundary is a hyperplane through the origin with unit normal
//! `n`; the signed distance of a code `z` to it is `nᵀz`. Editing moves a code
//! along `n`, and conditioning replaces `n` by its component orthogonal to a
//! set of other normals so that the conditioned attributes stay put.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Smallest latent dimension accepted for a [`LatentCode`].
pub const MIN_LATENT_DIM: usize = 4;
/// Allowed deviation of a stored normal from unit length.
pub const UNIT_NORM_TOLERANCE: f64 = 1e-9;
/// Norms at or below this are treated as zero by [`normalize`].
pub const ZERO_NORM: f64 = 1e-12;
/// A conditioned direction whose residual falls at or below this norm is
/// considered to lie in the span of the conditions.
pub const DEGENERATE_RESIDUAL: f64 = 1e-9;
/// Minimum eigenvalue of a condition Gram matrix.
pub const GRAM_EIGEN_FLOOR: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("vector norm {0:e} is too small to normalize")]
    ZeroVector(f64),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("space mismatch: expected {expected}, found {found}")]
    SpaceMismatch { expected: Space, found: Space },
    #[error("latent dimension {0} is below the minimum of {MIN_LATENT_DIM}")]
    DimensionTooSmall(usize),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("interpolation parameter {0} outside [0, 1]")]
    InterpolationOutOfRange(f64),
    #[error("normal of {name:?} has norm {norm}, expected 1")]
    NotUnit { name: String, norm: f64 },
    #[error("primal direction lies in the span of the conditions (residual norm {residual:e})")]
    DegenerateProjection { residual: f64 },
    #[error("condition directions are nearly dependent (smallest Gram eigenvalue {min_eigenvalue:e})")]
    DegenerateConditions { min_eigenvalue: f64 },
    #[error("duplicate condition {0:?}")]
    DuplicateCondition(String),
}

pub type Result<T> = std::result::Result<T, GeometryError>;

/// Which latent space a vector lives in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Space {
    Z,
    W,
}

impl fmt::Display for Space {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Space::Z => f.write_str("Z"),
            Space::W => f.write_str("W"),
        }
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

fn check_dims(expected: usize, found: usize) -> Result<()> {
    if expected != found {
        return Err(GeometryError::DimensionMismatch { expected, found });
    }
    Ok(())
}

fn check_space(expected: Space, found: Space) -> Result<()> {
    if expected != found {
        return Err(GeometryError::SpaceMismatch { expected, found });
    }
    Ok(())
}

/// Scales `v` to unit Euclidean length.
pub fn normalize(v: &[f64]) -> Result<Vec<f64>> {
    if v.iter().any(|x| !x.is_finite()) {
        return Err(GeometryError::NonFinite("vector"));
    }
    let n = norm(v);
    if n <= ZERO_NORM {
        return Err(GeometryError::ZeroVector(n));
    }
    Ok(v.iter().map(|x| x / n).collect())
}

/// A point of the latent space tagged with the space it belongs to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentCode {
    values: Vec<f64>,
    space: Space,
}

impl LatentCode {
    pub fn new(values: Vec<f64>, space: Space) -> Result<Self> {
        if values.len() < MIN_LATENT_DIM {
            return Err(GeometryError::DimensionTooSmall(values.len()));
        }
        if values.iter().any(|x| !x.is_finite()) {
            return Err(GeometryError::NonFinite("latent code"));
        }
        Ok(Self { values, space })
    }

    pub fn zeros(dim: usize, space: Space) -> Result<Self> {
        Self::new(vec![0.0; dim], space)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn space(&self) -> Space {
        self.space
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

/// Where a direction came from.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DirectionMeta {
    pub seed: u64,
    pub train_count: u64,
    pub val_accuracy: f64,
}

/// Unit normal of a semantic hyperplane.
///
/// The intercept is kept for classification only. Distances, edits and
/// conditioning all work with the normal through the origin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SemanticDirection {
    name: String,
    normal: Vec<f64>,
    intercept: f64,
    space: Space,
    meta: DirectionMeta,
}

impl SemanticDirection {
    /// Wraps an already unit-length normal.
    pub fn new(
        name: impl Into<String>,
        normal: Vec<f64>,
        intercept: f64,
        space: Space,
        meta: DirectionMeta,
    ) -> Result<Self> {
        let name = name.into();
        if normal.iter().any(|x| !x.is_finite()) || !intercept.is_finite() {
            return Err(GeometryError::NonFinite("direction"));
        }
        let n = norm(&normal);
        if (n - 1.0).abs() > UNIT_NORM_TOLERANCE {
            return Err(GeometryError::NotUnit { name, norm: n });
        }
        Ok(Self { name, normal, intercept, space, meta })
    }

    /// Normalizes `raw` first; the intercept is scaled by the same factor so
    /// the decision rule `sign(rawᵀz + intercept)` is preserved.
    pub fn from_unnormalized(
        name: impl Into<String>,
        raw: &[f64],
        intercept: f64,
        space: Space,
        meta: DirectionMeta,
    ) -> Result<Self> {
        let n = norm(raw);
        let normal = normalize(raw)?;
        Self::new(name, normal, intercept / n, space, meta)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn normal(&self) -> &[f64] {
        &self.normal
    }

    pub fn intercept(&self) -> f64 {
        self.intercept
    }

    pub fn space(&self) -> Space {
        self.space
    }

    pub fn meta(&self) -> &DirectionMeta {
        &self.meta
    }

    pub fn dim(&self) -> usize {
        self.normal.len()
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn with_meta(mut self, meta: DirectionMeta) -> Self {
        self.meta = meta;
        self
    }
}

/// Signed "distance" `nᵀz` of a code to the hyperplane of `n`.
pub fn distance(n: &SemanticDirection, z: &LatentCode) -> Result<f64> {
    check_space(n.space, z.space)?;
    check_dims(n.dim(), z.dim())?;
    Ok(dot(&n.normal, &z.values))
}

/// `z + alpha * n`.
pub fn edit(z: &LatentCode, n: &SemanticDirection, alpha: f64) -> Result<LatentCode> {
    check_space(n.space, z.space)?;
    check_dims(z.dim(), n.dim())?;
    if !alpha.is_finite() {
        return Err(GeometryError::NonFinite("alpha"));
    }
    let values = z
        .values
        .iter()
        .zip(&n.normal)
        .map(|(zi, ni)| zi + alpha * ni)
        .collect();
    LatentCode::new(values, z.space)
}

/// `(1 - t) * z1 + t * z2`.
pub fn interpolate(z1: &LatentCode, z2: &LatentCode, t: f64) -> Result<LatentCode> {
    check_space(z1.space, z2.space)?;
    check_dims(z1.dim(), z2.dim())?;
    if !(0.0..=1.0).contains(&t) {
        return Err(GeometryError::InterpolationOutOfRange(t));
    }
    let values = z1
        .values
        .iter()
        .zip(&z2.values)
        .map(|(a, b)| (1.0 - t) * a + t * b)
        .collect();
    LatentCode::new(values, z1.space)
}

/// Cosine similarity of two unit normals, clamped to `[-1, 1]`.
pub fn cosine(a: &SemanticDirection, b: &SemanticDirection) -> Result<f64> {
    check_dims(a.dim(), b.dim())?;
    Ok(dot(&a.normal, &b.normal).clamp(-1.0, 1.0))
}

/// An ordered, linearly independent set of directions to hold fixed.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionSet {
    directions: Vec<SemanticDirection>,
}

impl ConditionSet {
    pub fn new(directions: Vec<SemanticDirection>) -> Result<Self> {
        if let Some(first) = directions.first() {
            for (i, d) in directions.iter().enumerate() {
                check_space(first.space, d.space)?;
                check_dims(first.dim(), d.dim())?;
                if directions[..i].iter().any(|p| p.name == d.name) {
                    return Err(GeometryError::DuplicateCondition(d.name.clone()));
                }
            }
            let gram = Self::gram_of(&directions);
            let min_eigenvalue = gram.symmetric_eigenvalues().min();
            if min_eigenvalue <= GRAM_EIGEN_FLOOR {
                return Err(GeometryError::DegenerateConditions { min_eigenvalue });
            }
        }
        Ok(Self { directions })
    }

    pub fn empty() -> Self {
        Self { directions: Vec::new() }
    }

    pub fn directions(&self) -> &[SemanticDirection] {
        &self.directions
    }

    pub fn is_empty(&self) -> bool {
        self.directions.is_empty()
    }

    fn gram_of(directions: &[SemanticDirection]) -> DMatrix<f64> {
        let k = directions.len();
        DMatrix::from_fn(k, k, |i, j| dot(&directions[i].normal, &directions[j].normal))
    }

    /// Component of `v` orthogonal to the span of the condition normals,
    /// `v - C (CᵀC)⁻¹ Cᵀ v`.
    pub fn residual(&self, v: &[f64]) -> Result<Vec<f64>> {
        let Some(first) = self.directions.first() else {
            return Ok(v.to_vec());
        };
        check_dims(first.dim(), v.len())?;
        let gram = Self::gram_of(&self.directions);
        let rhs = DVector::from_iterator(
            self.directions.len(),
            self.directions.iter().map(|c| dot(&c.normal, v)),
        );
        // The Gram matrix passed the eigenvalue floor on construction, so it
        // is positive definite.
        let coeffs = gram
            .cholesky()
            .expect("condition Gram matrix is positive definite")
            .solve(&rhs);
        let mut out = v.to_vec();
        for (c, &w) in self.directions.iter().zip(coeffs.iter()) {
            for (o, ci) in out.iter_mut().zip(&c.normal) {
                *o -= w * ci;
            }
        }
        Ok(out)
    }
}

/// Conditions `primal` on `conditions`: projects out every condition normal
/// and re-normalizes. Moving along the result leaves the distance to every
/// conditioned hyperplane unchanged.
pub fn condition(primal: &SemanticDirection, conditions: &ConditionSet) -> Result<SemanticDirection> {
    let Some(first) = conditions.directions.first() else {
        return Ok(primal.clone());
    };
    check_space(first.space, primal.space)?;
    check_dims(first.dim(), primal.dim())?;
    let residual = conditions.residual(&primal.normal)?;
    let r = norm(&residual);
    if r <= DEGENERATE_RESIDUAL {
        return Err(GeometryError::DegenerateProjection { residual: r });
    }
    let normal: Vec<f64> = residual.iter().map(|x| x / r).collect();
    Ok(SemanticDirection {
        name: primal.name.clone(),
        normal,
        intercept: primal.intercept,
        space: primal.space,
        meta: primal.meta.clone(),
    })
}
