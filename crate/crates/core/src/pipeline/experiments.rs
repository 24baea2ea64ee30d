//! Editing experiments on a generator: how far edits can go, artifact
//! correction along the quality axis, and conditioned edits.

use serde::{Deserialize, Serialize};

use super::{BoundarySet, PipelineError, Result};
use crate::geometry::{self, ConditionSet, LatentCode, SemanticDirection};
use crate::oracle::GeneratorSpec;

/// Noise level at which a face counts as corrected.
pub const CLEAN_NOISE_LEVEL: f64 = 0.05;
pub const MAX_FIX_STEPS: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub alpha: f64,
    /// Noiseless score of the edited attribute.
    pub score: f64,
    /// `‖Δ identity features‖₂` relative to the start code.
    pub identity_drift: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceSweep {
    pub attribute: String,
    pub start: LatentCode,
    pub points: Vec<SweepPoint>,
    pub score_nondecreasing: bool,
}

/// Moves `z0` onto the hyperplane of `boundary`, then edits it by each
/// `alpha` and records the attribute score and identity drift.
///
/// The attribute is taken from the boundary's name.
pub fn distance_sweep(gen: &GeneratorSpec, boundary: &SemanticDirection, z0: &LatentCode, alphas: &[f64]) -> Result<DistanceSweep> {
    if alphas.iter().any(|a| !a.is_finite()) || alphas.windows(2).any(|w| w[1] < w[0]) {
        return Err(PipelineError::InvalidArgument("alphas must be finite and sorted".into()));
    }
    let attr = gen.attribute_index(boundary.name())?;
    let offset = geometry::distance(boundary, z0)?;
    let start = geometry::edit(z0, boundary, -offset)?;
    let base = gen.face_params(&start)?.identity_features;

    let mut points = Vec::with_capacity(alphas.len());
    for &alpha in alphas {
        let z = geometry::edit(&start, boundary, alpha)?;
        let score = gen.semantic_scores(&z)?[attr];
        let ids = gen.face_params(&z)?.identity_features;
        let identity_drift = ids.iter().zip(&base).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        points.push(SweepPoint { alpha, score, identity_drift });
    }
    let score_nondecreasing = points.windows(2).all(|w| w[1].score >= w[0].score);
    Ok(DistanceSweep { attribute: boundary.name().to_string(), start, points, score_nondecreasing })
}

/// Pushes `z` along the quality boundary in increments of `step` until the
/// rendered noise level is at most [`CLEAN_NOISE_LEVEL`] or
/// [`MAX_FIX_STEPS`] edits have been made.
pub fn fix_artifact(gen: &GeneratorSpec, bs: &BoundarySet, z: &LatentCode, step: f64) -> Result<LatentCode> {
    let quality = bs.quality()?;
    if !(step > 0.0 && step.is_finite()) {
        return Err(PipelineError::InvalidArgument(format!("step = {step} must be positive")));
    }
    let mut current = z.clone();
    for _ in 0..MAX_FIX_STEPS {
        if gen.face_params(&current)?.noise_level <= CLEAN_NOISE_LEVEL {
            break;
        }
        current = geometry::edit(&current, quality, step)?;
    }
    Ok(current)
}

/// Range (`max - min`) of every noiseless attribute score along
/// `z0 + α·direction` for the given `alphas`.
pub fn score_ranges(gen: &GeneratorSpec, direction: &SemanticDirection, z0: &LatentCode, alphas: &[f64]) -> Result<Vec<f64>> {
    let m = gen.attributes().len();
    let mut lo = vec![f64::INFINITY; m];
    let mut hi = vec![f64::NEG_INFINITY; m];
    for &a in alphas {
        let s = gen.semantic_scores(&geometry::edit(z0, direction, a)?)?;
        for i in 0..m {
            lo[i] = lo[i].min(s[i]);
            hi[i] = hi[i].max(s[i]);
        }
    }
    Ok(hi.iter().zip(&lo).map(|(h, l)| h - l).collect())
}

/// Score ranges for an edit of `primal` conditioned on `conditions`, all
/// taken from `bs`.
pub fn conditional_deltas(
    gen: &GeneratorSpec,
    bs: &BoundarySet,
    primal: &str,
    conditions: &[&str],
    z0: &LatentCode,
    alphas: &[f64],
) -> Result<Vec<f64>> {
    let set = ConditionSet::new(conditions.iter().map(|c| bs.direction(c).cloned()).collect::<Result<_>>()?)?;
    let dir = geometry::condition(bs.direction(primal)?, &set)?;
    score_ranges(gen, &dir, z0, alphas)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{DirectionMeta, Space};
    use crate::oracle::{make_generator, GeneratorConfig};

    fn gen() -> GeneratorSpec {
        make_generator(GeneratorConfig::default().with_dim(64)).unwrap()
    }

    fn scaled(v: &[f64], a: f64) -> LatentCode {
        LatentCode::new(v.iter().map(|x| a * x).collect(), Space::Z).unwrap()
    }

    #[test]
    fn ground_truth_sweep_keeps_identity() {
        let g = gen();
        let n = g.ground_truth("smile").unwrap();
        let z0 = scaled(&g.identity_dirs()[0], 1.5);
        let sweep = distance_sweep(&g, &n, &z0, &[-5.0, 0.0, 3.0, 10.0]).unwrap();
        assert!(sweep.points.iter().all(|p| p.identity_drift == 0.0));
        assert!(sweep.score_nondecreasing);
    }

    #[test]
    fn tilted_direction_drifts_proportionally() {
        // 0.98 toward the truth, the rest along an identity axis.
        let g = gen();
        let c: f64 = 0.98;
        let s = (1.0 - c * c).sqrt();
        let raw: Vec<f64> = g.normal(2).iter().zip(&g.identity_dirs()[1]).map(|(n, p)| c * n + s * p).collect();
        let dir = SemanticDirection::from_unnormalized("age", &raw, 0.0, Space::Z, DirectionMeta::default()).unwrap();
        let z0 = LatentCode::zeros(64, Space::Z).unwrap();
        let sweep = distance_sweep(&g, &dir, &z0, &[3.0, 10.0]).unwrap();
        let (d3, d10) = (sweep.points[0].identity_drift, sweep.points[1].identity_drift);
        assert!(d10 > d3);
        assert!((d3 - 3.0 * s).abs() < 1e-9 && (d10 - 10.0 * s).abs() < 1e-9);
        // tanh(λ · 0.98 · α) with λ = 0.5 saturates by α = 10
        assert!(sweep.points[1].score >= 0.995);
    }

    #[test]
    fn unsorted_alphas_rejected() {
        let g = gen();
        let n = g.ground_truth("age").unwrap();
        let z0 = LatentCode::zeros(64, Space::Z).unwrap();
        assert!(distance_sweep(&g, &n, &z0, &[1.0, 0.0]).is_err());
    }

    #[test]
    fn fix_artifact_examples() {
        let g = gen();
        let bs = BoundarySet::ground_truth(&g).unwrap();
        let clean = scaled(g.normal(0), 1.0);
        assert_eq!(fix_artifact(&g, &bs, &clean, 2.0).unwrap(), clean);

        let broken = scaled(g.quality_dir(), -6.0);
        assert_eq!(g.face_params(&broken).unwrap().noise_level, 1.0);
        let fixed = fix_artifact(&g, &bs, &broken, 2.0).unwrap();
        assert!(g.face_params(&fixed).unwrap().noise_level <= CLEAN_NOISE_LEVEL);
        // three steps of 2 bring −6 to 0
        let moved = geometry::distance(bs.quality().unwrap(), &fixed).unwrap();
        assert!(moved.abs() < 1e-12, "{moved}");
        let before = g.semantic_scores(&broken).unwrap();
        let after = g.semantic_scores(&fixed).unwrap();
        for (a, b) in before.iter().zip(&after) {
            assert!((a - b).abs() <= 0.05);
        }
    }

    #[test]
    fn fix_artifact_requires_quality() {
        let g = gen();
        let mut bs = BoundarySet::ground_truth(&g).unwrap();
        bs.boundaries.remove(crate::oracle::QUALITY);
        let z = LatentCode::zeros(64, Space::Z).unwrap();
        assert_eq!(fix_artifact(&g, &bs, &z, 1.0), Err(PipelineError::QualityBoundaryMissing));
    }

    #[test]
    fn conditioning_holds_gender_fixed() {
        let g = make_generator(GeneratorConfig::default().with_dim(64).with_noise(0.0)).unwrap();
        let bs = BoundarySet::ground_truth(&g).unwrap();
        let z0 = LatentCode::zeros(64, Space::Z).unwrap();
        let alphas: Vec<f64> = (-30..=30).map(|i| i as f64 / 10.0).collect();
        let (age, gender) = (2, 3);
        let cond = conditional_deltas(&g, &bs, "age", &["gender"], &z0, &alphas).unwrap();
        assert!(cond[gender] < 1e-12 && cond[age] >= 0.5);
        let raw = conditional_deltas(&g, &bs, "age", &[], &z0, &alphas).unwrap();
        assert!(raw[gender] >= 0.15);
    }
}
