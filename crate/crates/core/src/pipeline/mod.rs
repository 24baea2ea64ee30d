//! The boundary-discovery pipeline.
//!
//! 1. [`synthesize_dataset`] draws Gaussian latent codes and scores them.
//! 2. [`select_candidates`] keeps the `k` highest and `k` lowest scored
//!    samples of one attribute and splits them 70/30 into train/validation.
//! 3. [`fit_all_boundaries`] trains one linear SVM per attribute (plus the
//!    quality axis).
//! 4. [`boundary_correlation`] and [`score_correlation`] measure
//!    entanglement two ways.
//!
//! Monte Carlo checks of the concentration results live in [`montecarlo`];
//! editing experiments (distance sweeps, artifact correction, conditional
//! edits) live in [`experiments`].

pub mod experiments;
pub mod montecarlo;

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{self, GeometryError, LatentCode, SemanticDirection, Space};
use crate::oracle::{self, GeneratorSpec, OracleError, QUALITY};
use crate::rng;
use crate::stats;
use crate::svm::{self, LabeledDataset, SvmConfig, SvmError, TrainedBoundary};

pub use experiments::{
    conditional_deltas, distance_sweep, fix_artifact, score_ranges, DistanceSweep, SweepPoint,
};
pub use montecarlo::{
    annulus_mc, property2_mc, sphere_slab_mc, tail_mc, AnnulusFit, Check, MonteCarloReport,
};

/// Samples drawn per RNG stream.
pub const SAMPLE_CHUNK: usize = 1024;
/// Fraction of each candidate side used for training.
pub const TRAIN_FRACTION: f64 = 0.7;
pub const DEFAULT_SAMPLES: usize = 50_000;
pub const DEFAULT_CANDIDATES: usize = 2_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PipelineError {
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Svm(#[from] SvmError),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("k = {k} needs {} samples but the dataset has {count}", 2 * k)]
    KTooLarge { k: usize, count: usize },
    #[error("score column {0} has zero variance")]
    ZeroVariance(usize),
    #[error("boundary set has no quality boundary")]
    QualityBoundaryMissing,
    #[error("boundary set has no boundary for {0:?}")]
    MissingBoundary(String),
}

pub type Result<T> = std::result::Result<T, PipelineError>;

/// Latent codes and their attribute scores, stored as `f32` exactly as
/// they appear in an `LSDS` file.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleDataset {
    dim: usize,
    attributes: usize,
    seed: u64,
    space: Space,
    latents: Vec<f32>,
    scores: Vec<f32>,
}

impl SampleDataset {
    pub fn from_parts(dim: usize, attributes: usize, seed: u64, space: Space, latents: Vec<f32>, scores: Vec<f32>) -> Self {
        let count = latents.len().checked_div(dim).unwrap_or(0);
        assert_eq!(latents.len(), count * dim, "latent buffer is not a whole number of rows");
        assert_eq!(scores.len(), count * attributes, "score buffer does not match the latent count");
        Self { dim, attributes, seed, space, latents, scores }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn attribute_count(&self) -> usize {
        self.attributes
    }

    pub fn count(&self) -> usize {
        self.latents.len().checked_div(self.dim).unwrap_or(0)
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn space(&self) -> Space {
        self.space
    }

    pub fn latent(&self, i: usize) -> &[f32] {
        &self.latents[i * self.dim..(i + 1) * self.dim]
    }

    pub fn scores(&self, i: usize) -> &[f32] {
        &self.scores[i * self.attributes..(i + 1) * self.attributes]
    }

    pub fn latent_f64(&self, i: usize) -> Vec<f64> {
        self.latent(i).iter().map(|&v| f64::from(v)).collect()
    }

    pub fn latent_code(&self, i: usize) -> LatentCode {
        LatentCode::new(self.latent_f64(i), self.space).expect("stored latents are finite")
    }

    pub fn score_column(&self, j: usize) -> Vec<f64> {
        self.scores.iter().skip(j).step_by(self.attributes).map(|&v| f64::from(v)).collect()
    }
}

/// Draws `count` codes from `N(0, I)` and scores them with `gen`.
///
/// Chunk `c` of [`SAMPLE_CHUNK`] samples uses RNG stream `c` of `seed`, so the
/// result does not depend on how chunks are scheduled.
pub fn synthesize_dataset(gen: &GeneratorSpec, count: usize, seed: u64) -> Result<SampleDataset> {
    if count == 0 {
        return Err(PipelineError::InvalidArgument("count must be at least 1".into()));
    }
    let d = gen.dim();
    let m = gen.attributes().len();
    let chunks: Vec<(Vec<f32>, Vec<f32>)> = (0..count.div_ceil(SAMPLE_CHUNK))
        .into_par_iter()
        .map(|c| -> Result<(Vec<f32>, Vec<f32>)> {
            let n = SAMPLE_CHUNK.min(count - c * SAMPLE_CHUNK);
            let mut r = rng::stream(seed, c as u64);
            let mut latents = Vec::with_capacity(n * d);
            let mut scores = Vec::with_capacity(n * m);
            for _ in 0..n {
                let z: Vec<f64> = rng::normal_vec(&mut r, d).into_iter().map(|v| f64::from(v as f32)).collect();
                latents.extend(z.iter().map(|&v| v as f32));
                let code = LatentCode::new(z, Space::Z)?;
                scores.extend(gen.score(&code)?.scores.iter().map(|&s| s as f32));
            }
            Ok((latents, scores))
        })
        .collect::<Result<_>>()?;
    let mut latents = Vec::with_capacity(count * d);
    let mut scores = Vec::with_capacity(count * m);
    for (l, s) in chunks {
        latents.extend(l);
        scores.extend(s);
    }
    Ok(SampleDataset::from_parts(d, m, seed, Space::Z, latents, scores))
}

/// The same samples expressed in W. Scores are carried over unchanged: they
/// describe the synthesized faces, not the representation.
pub fn to_w_space(gen: &GeneratorSpec, ds: &SampleDataset) -> Result<SampleDataset> {
    if ds.space != Space::Z {
        return Err(GeometryError::SpaceMismatch { expected: Space::Z, found: ds.space }.into());
    }
    let rows: Vec<Vec<f32>> = (0..ds.count())
        .into_par_iter()
        .map(|i| -> Result<Vec<f32>> {
            let w = oracle::warp(gen, &ds.latent_code(i))?;
            Ok(w.values().iter().map(|&v| v as f32).collect())
        })
        .collect::<Result<_>>()?;
    Ok(SampleDataset::from_parts(ds.dim, ds.attributes, ds.seed, Space::W, rows.concat(), ds.scores.clone()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CandidateSplit {
    pub attribute: String,
    pub k: usize,
    pub train: LabeledDataset,
    pub validation: LabeledDataset,
    /// Dataset indices of the positive and negative candidates.
    pub positives: Vec<usize>,
    pub negatives: Vec<usize>,
}

/// Picks the `k` highest (`+1`) and `k` lowest (`-1`) entries of `scores`
/// as candidates and splits each side 70/30 into train and validation.
///
/// Samples are ordered by `(score, index)`, so equal scores fall back to the
/// sample index. Each side is shuffled with its own stream of `split_seed`.
pub fn select_candidates(
    ds: &SampleDataset,
    attribute: &str,
    scores: &[f64],
    k: usize,
    split_seed: u64,
) -> Result<CandidateSplit> {
    let count = ds.count();
    if scores.len() != count {
        return Err(PipelineError::InvalidArgument(format!(
            "{} scores for {count} samples",
            scores.len()
        )));
    }
    if k == 0 || 2 * k > count {
        return Err(PipelineError::KTooLarge { k, count });
    }
    let mut order: Vec<usize> = (0..count).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(a.cmp(&b)));
    let mut negatives = order[..k].to_vec();
    let mut positives = order[count - k..].to_vec();
    positives.reverse();

    let n_train = (TRAIN_FRACTION * k as f64).round() as usize;
    let mut train = LabeledDataset::new(ds.dim, ds.space);
    let mut validation = LabeledDataset::new(ds.dim, ds.space);
    for (stream, (side, label)) in [(&positives, 1i8), (&negatives, -1i8)].into_iter().enumerate() {
        let mut shuffled = side.clone();
        shuffled.shuffle(&mut rng::stream(split_seed, stream as u64));
        for (j, &i) in shuffled.iter().enumerate() {
            let target = if j < n_train { &mut train } else { &mut validation };
            target.push(&ds.latent_f64(i), label)?;
        }
    }
    positives.sort_unstable();
    negatives.sort_unstable();
    Ok(CandidateSplit { attribute: attribute.to_string(), k, train, validation, positives, negatives })
}

/// Candidate split for a generator attribute (or [`QUALITY`]).
pub fn select_attribute(
    ds: &SampleDataset,
    gen: &GeneratorSpec,
    attribute: &str,
    k: usize,
    split_seed: u64,
) -> Result<CandidateSplit> {
    let scores = if attribute == QUALITY {
        quality_scores(gen, ds)?
    } else {
        ds.score_column(gen.attribute_index(attribute)?)
    };
    select_candidates(ds, attribute, &scores, k, split_seed)
}

fn quality_scores(gen: &GeneratorSpec, ds: &SampleDataset) -> Result<Vec<f64>> {
    (0..ds.count())
        .into_par_iter()
        .map(|i| Ok(gen.quality_score(&ds.latent_code(i))?))
        .collect()
}

/// A fitted boundary with its accuracy on every sample of the dataset,
/// labeled by the noiseless oracle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedBoundary {
    pub boundary: TrainedBoundary,
    pub all_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundarySet {
    pub space: Space,
    /// Attribute order used for correlation matrices.
    pub attributes: Vec<String>,
    pub boundaries: BTreeMap<String, FittedBoundary>,
}

impl BoundarySet {
    /// The generator's planted directions, quality included.
    pub fn ground_truth(gen: &GeneratorSpec) -> Result<Self> {
        let mut boundaries = BTreeMap::new();
        for name in gen.attributes().iter().map(String::as_str).chain([QUALITY]) {
            let direction = gen.ground_truth(name)?;
            let boundary = TrainedBoundary { direction, train_accuracy: 1.0, val_accuracy: 1.0 };
            boundaries.insert(name.to_string(), FittedBoundary { boundary, all_accuracy: 1.0 });
        }
        Ok(Self { space: gen.space(), attributes: gen.attributes().to_vec(), boundaries })
    }

    pub fn direction(&self, name: &str) -> Result<&SemanticDirection> {
        self.boundaries
            .get(name)
            .map(|b| &b.boundary.direction)
            .ok_or_else(|| PipelineError::MissingBoundary(name.to_string()))
    }

    pub fn quality(&self) -> Result<&SemanticDirection> {
        self.boundaries
            .get(QUALITY)
            .map(|b| &b.boundary.direction)
            .ok_or(PipelineError::QualityBoundaryMissing)
    }
}

/// Trains one boundary per generator attribute and one for [`QUALITY`].
///
/// Attribute `j` (quality last) splits its candidates with stream `j` of
/// `svm_config.seed` and trains with the same config; results do not depend
/// on the order the attributes are processed in.
pub fn fit_all_boundaries(ds: &SampleDataset, gen: &GeneratorSpec, k: usize, svm_config: &SvmConfig) -> Result<BoundarySet> {
    if ds.dim() != gen.dim() || ds.attribute_count() != gen.attributes().len() {
        return Err(PipelineError::InvalidArgument("dataset does not match the generator".into()));
    }
    let names: Vec<&str> = gen.attributes().iter().map(String::as_str).chain([QUALITY]).collect();
    // Noiseless ground-truth labels of every sample, attributes then quality.
    let truth: Vec<Vec<i8>> = (0..ds.count())
        .into_par_iter()
        .map(|i| -> Result<Vec<i8>> {
            let code = ds.latent_code(i);
            let mut p = gen.projections(&code)?;
            p.push(gen.quality_projection(&code)?);
            Ok(p.into_iter().map(|v| if v >= 0.0 { 1 } else { -1 }).collect())
        })
        .collect::<Result<_>>()?;

    let fitted: Vec<(String, FittedBoundary)> = names
        .par_iter()
        .enumerate()
        .map(|(j, &name)| -> Result<(String, FittedBoundary)> {
            let split_seed = rng::mix64(svm_config.seed ^ (j as u64).wrapping_mul(0x9e37_79b9));
            let split = select_attribute(ds, gen, name, k, split_seed)?;
            let boundary = svm::fit_with_validation(&split.train, &split.validation, svm_config)?.with_name(name);
            let correct = (0..ds.count())
                .filter(|&i| svm::classify(&boundary, &ds.latent_f64(i)).map(|y| y == truth[i][j]).unwrap_or(false))
                .count();
            let all_accuracy = correct as f64 / ds.count() as f64;
            Ok((name.to_string(), FittedBoundary { boundary, all_accuracy }))
        })
        .collect::<Result<_>>()?;

    Ok(BoundarySet {
        space: ds.space(),
        attributes: gen.attributes().to_vec(),
        boundaries: fitted.into_iter().collect(),
    })
}

/// Cosine of every pair of attribute normals, in `bs.attributes` order.
pub fn boundary_correlation(bs: &BoundarySet) -> Result<Vec<Vec<f64>>> {
    if bs.attributes.len() < 2 {
        return Err(PipelineError::InvalidArgument("need at least two boundaries".into()));
    }
    let dirs: Vec<&SemanticDirection> = bs.attributes.iter().map(|a| bs.direction(a)).collect::<Result<_>>()?;
    let mut out = vec![vec![0.0; dirs.len()]; dirs.len()];
    for i in 0..dirs.len() {
        out[i][i] = 1.0;
        for j in 0..i {
            let c = geometry::cosine(dirs[i], dirs[j])?;
            out[i][j] = c;
            out[j][i] = c;
        }
    }
    Ok(out)
}

/// Pearson correlation matrix of the score columns.
pub fn score_correlation(ds: &SampleDataset) -> Result<Vec<Vec<f64>>> {
    if ds.count() < 2 {
        return Err(PipelineError::InvalidArgument("need at least two samples".into()));
    }
    let m = ds.attribute_count();
    let cols: Vec<Vec<f64>> = (0..m).map(|j| ds.score_column(j)).collect();
    for (j, c) in cols.iter().enumerate() {
        if stats::variance(c) <= 0.0 {
            return Err(PipelineError::ZeroVariance(j));
        }
    }
    let mut out = vec![vec![1.0; m]; m];
    for i in 0..m {
        for j in 0..i {
            let r = stats::pearson(&cols[i], &cols[j]).ok_or(PipelineError::ZeroVariance(i))?;
            out[i][j] = r;
            out[j][i] = r;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationReport {
    pub attributes: Vec<String>,
    pub boundary_cosine: Vec<Vec<f64>>,
    pub score_pearson: Vec<Vec<f64>>,
}

pub fn correlation_report(bs: &BoundarySet, ds: &SampleDataset) -> Result<CorrelationReport> {
    Ok(CorrelationReport {
        attributes: bs.attributes.clone(),
        boundary_cosine: boundary_correlation(bs)?,
        score_pearson: score_correlation(ds)?,
    })
}

/// Knobs of a complete pipeline run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub samples: usize,
    pub candidates: usize,
    pub sample_seed: u64,
    pub svm: SvmConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            samples: DEFAULT_SAMPLES,
            candidates: DEFAULT_CANDIDATES,
            sample_seed: 0,
            svm: SvmConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub config: PipelineConfig,
    pub boundaries: BoundarySet,
    pub correlations: CorrelationReport,
}

/// Samples, fits every boundary and measures correlations.
pub fn run(gen: &GeneratorSpec, config: &PipelineConfig) -> Result<(SampleDataset, PipelineReport)> {
    let ds = synthesize_dataset(gen, config.samples, config.sample_seed)?;
    let boundaries = fit_all_boundaries(&ds, gen, config.candidates, &config.svm)?;
    let correlations = correlation_report(&boundaries, &ds)?;
    Ok((ds, PipelineReport { config: config.clone(), boundaries, correlations }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::{make_generator, GeneratorConfig};

    fn tiny_ds(scores: &[f32]) -> SampleDataset {
        let latents = (0..scores.len() * 4).map(|i| i as f32).collect();
        SampleDataset::from_parts(4, 1, 0, Space::Z, latents, scores.to_vec())
    }

    #[test]
    fn extremes_are_candidates() {
        let ds = tiny_ds(&[-1.0, 0.0, 1.0]);
        let split = select_candidates(&ds, "a", &ds.score_column(0), 1, 0).unwrap();
        assert_eq!(split.positives, vec![2]);
        assert_eq!(split.negatives, vec![0]);
        assert_eq!(split.train.len(), 2);
        assert!(split.validation.is_empty());
    }

    #[test]
    fn ties_fall_back_to_index() {
        let ds = tiny_ds(&[0.5; 10]);
        let split = select_candidates(&ds, "a", &ds.score_column(0), 3, 4).unwrap();
        assert_eq!(split.negatives, vec![0, 1, 2]);
        assert_eq!(split.positives, vec![7, 8, 9]);
        assert_eq!(split, select_candidates(&ds, "a", &ds.score_column(0), 3, 4).unwrap());
    }

    #[test]
    fn k_too_large() {
        let ds = tiny_ds(&[0.0, 1.0, 2.0]);
        assert_eq!(
            select_candidates(&ds, "a", &ds.score_column(0), 2, 0),
            Err(PipelineError::KTooLarge { k: 2, count: 3 })
        );
    }

    #[test]
    fn split_sizes_follow_seventy_thirty() {
        let gen = make_generator(GeneratorConfig::default().with_dim(32)).unwrap();
        let ds = synthesize_dataset(&gen, 5_000, 1).unwrap();
        let split = select_attribute(&ds, &gen, "age", 1_000, 9).unwrap();
        assert_eq!(split.train.len(), 1_400);
        assert_eq!(split.validation.len(), 600);
        let pos = split.train.labels().iter().filter(|&&y| y == 1).count();
        assert_eq!(pos, 700);
    }

    #[test]
    fn synthesize_is_deterministic_and_chunk_invariant() {
        let gen = make_generator(GeneratorConfig::default().with_dim(16)).unwrap();
        let a = synthesize_dataset(&gen, 1, 42).unwrap();
        assert_eq!(a, synthesize_dataset(&gen, 1, 42).unwrap());
        // A prefix of a larger draw equals the smaller draw.
        let big = synthesize_dataset(&gen, SAMPLE_CHUNK + 10, 42).unwrap();
        assert_eq!(big.latent(0), a.latent(0));
        assert_eq!(big.scores(0), a.scores(0));
        let scores = gen.score(&a.latent_code(0)).unwrap().scores;
        for (s, t) in a.scores(0).iter().zip(scores) {
            assert_eq!(*s, t as f32);
        }
    }

    #[test]
    fn duplicated_column_correlates_perfectly() {
        let latents = vec![0.0; 4 * 4];
        let scores = vec![1.0, 1.0, 2.0, 2.0, 0.5, 0.5, 3.0, 3.0];
        let ds = SampleDataset::from_parts(4, 2, 0, Space::Z, latents, scores);
        let r = score_correlation(&ds).unwrap();
        assert!((r[0][1] - 1.0).abs() < 1e-12);
        let flat = SampleDataset::from_parts(4, 1, 0, Space::Z, vec![0.0; 8], vec![1.0, 1.0]);
        assert_eq!(score_correlation(&flat), Err(PipelineError::ZeroVariance(0)));
    }

    #[test]
    fn ground_truth_correlation_is_the_gram() {
        let gen = make_generator(GeneratorConfig::default().with_dim(32)).unwrap();
        let bs = BoundarySet::ground_truth(&gen).unwrap();
        let c = boundary_correlation(&bs).unwrap();
        for i in 0..5 {
            assert_eq!(c[i][i], 1.0);
            for j in 0..5 {
                assert!((c[i][j] - oracle::DEFAULT_GRAM[i][j]).abs() < 1e-9);
            }
        }
    }
}
