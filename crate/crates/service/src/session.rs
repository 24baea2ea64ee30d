//! Editing sessions: a current latent code and the requests that produced
//! it from the initial one.

use std::collections::BTreeMap;
use std::sync::Arc;

use hypersem_core::geometry::{self, ConditionSet, GeometryError, LatentCode, SemanticDirection};
use hypersem_core::GeneratorSpec;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Boundaries by name.
pub type Boundaries = BTreeMap<String, SemanticDirection>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SessionError {
    #[error("unknown attribute {0:?}")]
    UnknownAttribute(String),
    #[error("attribute {0:?} cannot be conditioned on itself")]
    SelfCondition(String),
    #[error("condition {0:?} is listed twice")]
    DuplicateCondition(String),
    #[error("alpha must be finite")]
    NonFiniteAlpha,
    #[error("conditioning on {conditions:?} is degenerate: {source}")]
    Degenerate {
        conditions: Vec<String>,
        #[source]
        source: GeometryError,
    },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

pub type Result<T> = std::result::Result<T, SessionError>;

/// Move along `attribute`'s boundary by `alpha`, holding every boundary in
/// `conditions` fixed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManipulationRequest {
    pub attribute: String,
    pub alpha: f64,
    #[serde(default)]
    pub conditions: Vec<String>,
}

impl ManipulationRequest {
    pub fn new(attribute: impl Into<String>, alpha: f64, conditions: &[&str]) -> Self {
        Self { attribute: attribute.into(), alpha, conditions: conditions.iter().map(|c| c.to_string()).collect() }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.alpha.is_finite() {
            return Err(SessionError::NonFiniteAlpha);
        }
        for (i, c) in self.conditions.iter().enumerate() {
            if *c == self.attribute {
                return Err(SessionError::SelfCondition(c.clone()));
            }
            if self.conditions[..i].contains(c) {
                return Err(SessionError::DuplicateCondition(c.clone()));
            }
        }
        Ok(())
    }

    /// True when `self` exactly reverses `other`.
    fn undoes(&self, other: &ManipulationRequest) -> bool {
        self.alpha != 0.0
            && self.alpha == -other.alpha
            && self.attribute == other.attribute
            && self.conditions == other.conditions
    }
}

/// The direction a request moves along: the attribute's normal with every
/// condition projected out.
pub fn resolve(boundaries: &Boundaries, req: &ManipulationRequest) -> Result<SemanticDirection> {
    req.validate()?;
    let lookup = |name: &str| boundaries.get(name).cloned().ok_or_else(|| SessionError::UnknownAttribute(name.to_string()));
    let primal = lookup(&req.attribute)?;
    let conditions = req.conditions.iter().map(|c| lookup(c)).collect::<Result<Vec<_>>>()?;
    let degenerate = |source| SessionError::Degenerate { conditions: req.conditions.clone(), source };
    let set = ConditionSet::new(conditions).map_err(degenerate)?;
    geometry::condition(&primal, &set).map_err(degenerate)
}

/// A latent code under edit.
///
/// Every applied request is recorded. A request that exactly reverses the
/// previous one restores the previous code instead of stepping back, so a
/// `+α` then `-α` pair returns to the starting code bit for bit; replaying
/// the history follows the same rule and reproduces the current code exactly.
#[derive(Debug, Clone)]
pub struct SessionState {
    generator: Arc<GeneratorSpec>,
    boundaries: Arc<Boundaries>,
    seed: u64,
    initial: LatentCode,
    current: LatentCode,
    history: Vec<ManipulationRequest>,
    /// `before[i]` is the code request `i` was applied to.
    before: Vec<LatentCode>,
}

impl SessionState {
    pub fn new(generator: Arc<GeneratorSpec>, boundaries: Arc<Boundaries>, seed: u64, initial: LatentCode) -> Self {
        Self { generator, boundaries, seed, current: initial.clone(), initial, history: Vec::new(), before: Vec::new() }
    }

    /// Rebuilds a session by applying `history` to `initial`.
    pub fn replay(
        generator: Arc<GeneratorSpec>,
        boundaries: Arc<Boundaries>,
        seed: u64,
        initial: LatentCode,
        history: &[ManipulationRequest],
    ) -> Result<Self> {
        let mut s = Self::new(generator, boundaries, seed, initial);
        for req in history {
            s.apply(req)?;
        }
        Ok(s)
    }

    /// Applies `req` and returns the direction moved along.
    pub fn apply(&mut self, req: &ManipulationRequest) -> Result<SemanticDirection> {
        let direction = resolve(&self.boundaries, req)?;
        let next = match (self.history.last(), self.before.last()) {
            (Some(last), Some(prev)) if req.undoes(last) => prev.clone(),
            _ => geometry::edit(&self.current, &direction, req.alpha)?,
        };
        self.before.push(std::mem::replace(&mut self.current, next));
        self.history.push(req.clone());
        Ok(direction)
    }

    pub fn generator(&self) -> &Arc<GeneratorSpec> {
        &self.generator
    }

    pub fn boundaries(&self) -> &Arc<Boundaries> {
        &self.boundaries
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn initial(&self) -> &LatentCode {
        &self.initial
    }

    pub fn current(&self) -> &LatentCode {
        &self.current
    }

    pub fn history(&self) -> &[ManipulationRequest] {
        &self.history
    }
}
