//! Analytic stand-in for a face GAN plus its attribute classifier.
//!
//! Each attribute `i` has a planted unit direction `nᵢ` and a gain `λᵢ`; the
//! score of a code is `tanh(λᵢ nᵢᵀu) + ε` where `u` is the code in the
//! generator's semantic space and `ε` is replayable pseudo-noise. Near the
//! boundary the score is linear in the signed distance; far away it
//! saturates. The directions are embedded in `R^d` with a prescribed Gram
//! matrix, together with an "image quality" axis and an identity subspace
//! orthogonal to all of them.
//!
//! A generator configured for [`Space::W`] evaluates the same linear form on
//! `w = R tanh(s z) / s`, so its boundaries are flat in W and curved in Z.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{self, dot, DirectionMeta, GeometryError, LatentCode, SemanticDirection, Space};
use crate::rng;

/// Default attribute order.
pub const DEFAULT_ATTRIBUTES: [&str; 5] = ["pose", "smile", "age", "gender", "eyeglasses"];

/// Name of the image-quality boundary.
pub const QUALITY: &str = "quality";

/// Measured cosines between the five default attribute boundaries.
pub const DEFAULT_GRAM: [[f64; 5]; 5] = [
    [1.00, -0.04, -0.06, -0.05, -0.04],
    [-0.04, 1.00, 0.04, -0.10, -0.05],
    [-0.06, 0.04, 1.00, 0.49, 0.38],
    [-0.05, -0.10, 0.49, 1.00, 0.52],
    [-0.04, -0.05, 0.38, 0.52, 1.00],
];

const MAX_PSD_ITERATIONS: usize = 100;
/// Degrees of yaw at a pose score of ±1.
pub const YAW_SPAN: f64 = 45.0;
/// Jaw-width change at a gender score of ±1.
pub const JAW_SPAN: f64 = 0.4;
/// Quality-axis distance at which the noise level reaches 1.
pub const NOISE_SPAN: f64 = 5.0;
pub const MAX_INVERT_STEPS: usize = 10_000;
/// Objective value below which an inversion counts as converged.
pub const INVERT_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("unknown attribute {0:?}")]
    UnknownAttribute(String),
    #[error("invalid generator configuration: {0}")]
    InvalidConfig(String),
    #[error("latent dimension {dim} too small; need at least {required}")]
    DimensionTooSmall { dim: usize, required: usize },
    #[error("target Gram matrix could not be repaired to PSD (smallest eigenvalue {min_eigenvalue:e})")]
    GramNotRepairable { min_eigenvalue: f64 },
    #[error("W coordinate {index} = {value} is outside the warp range")]
    OutOfRange { index: usize, value: f64 },
    #[error("inversion did not converge after {steps} steps (objective {objective:e})")]
    NoConvergence { steps: usize, objective: f64 },
    #[error("target {channel} requires a saturated score ({score})")]
    SaturatedTarget { channel: &'static str, score: f64 },
    #[error("target {channel} = {value} is outside its range")]
    InvalidTarget { channel: &'static str, value: f64 },
}

pub type Result<T> = std::result::Result<T, OracleError>;

/// Everything needed to rebuild a generator; the matrices themselves are
/// regenerated from `seed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub attributes: Vec<String>,
    pub gram: Vec<Vec<f64>>,
    pub dim: usize,
    pub seed: u64,
    pub noise_sigma: f64,
    pub lambdas: Vec<f64>,
    pub identity_dims: usize,
    pub warp_scale: f64,
    /// Space in which the attribute scores are linear.
    pub space: Space,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            attributes: DEFAULT_ATTRIBUTES.iter().map(|s| s.to_string()).collect(),
            gram: DEFAULT_GRAM.iter().map(|r| r.to_vec()).collect(),
            dim: 512,
            seed: 0,
            noise_sigma: 0.1,
            lambdas: vec![0.5; DEFAULT_ATTRIBUTES.len()],
            identity_dims: 8,
            warp_scale: 1.0,
            space: Space::Z,
        }
    }
}

impl GeneratorConfig {
    /// Default attributes with mutually orthogonal directions.
    pub fn orthogonal() -> Self {
        let m = DEFAULT_ATTRIBUTES.len();
        let gram = (0..m).map(|i| (0..m).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect();
        Self { gram, ..Self::default() }
    }

    pub fn with_dim(self, dim: usize) -> Self {
        Self { dim, ..self }
    }

    pub fn with_seed(self, seed: u64) -> Self {
        Self { seed, ..self }
    }

    pub fn with_noise(self, noise_sigma: f64) -> Self {
        Self { noise_sigma, ..self }
    }

    pub fn with_space(self, space: Space) -> Self {
        Self { space, ..self }
    }

    fn validate(&self) -> Result<()> {
        let m = self.attributes.len();
        let bad = |msg: String| Err(OracleError::InvalidConfig(msg));
        if m == 0 {
            return bad("at least one attribute is required".into());
        }
        for (i, a) in self.attributes.iter().enumerate() {
            if a.is_empty() || a == QUALITY || self.attributes[..i].contains(a) {
                return bad(format!("attribute name {a:?} is empty, reserved or repeated"));
            }
        }
        if self.gram.len() != m || self.gram.iter().any(|r| r.len() != m) {
            return bad(format!("Gram matrix must be {m}x{m}"));
        }
        for i in 0..m {
            if (self.gram[i][i] - 1.0).abs() > 1e-12 {
                return bad(format!("Gram diagonal entry {i} is {}, expected 1", self.gram[i][i]));
            }
            for j in 0..m {
                let g = self.gram[i][j];
                if !g.is_finite() || (g - self.gram[j][i]).abs() > 1e-12 || g.abs() > 1.0 {
                    return bad(format!("Gram entry ({i},{j}) = {g} is not a symmetric correlation"));
                }
            }
        }
        if self.lambdas.len() != m || self.lambdas.iter().any(|l| !(*l > 0.0 && l.is_finite())) {
            return bad(format!("need {m} positive gains"));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad("noise_sigma must be nonnegative".into());
        }
        if !(self.warp_scale > 0.0 && self.warp_scale <= 3.0) {
            return bad(format!("warp_scale {} outside (0, 3]", self.warp_scale));
        }
        let required = (m + self.identity_dims + 1).max(geometry::MIN_LATENT_DIM);
        if self.dim < required {
            return Err(OracleError::DimensionTooSmall { dim: self.dim, required });
        }
        Ok(())
    }
}

/// Semantic scores of one code, in attribute order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeScoreVector {
    pub scores: Vec<f64>,
}

/// Renderable description of a face. Every field is kept inside its range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaceParams {
    /// Degrees, `[-45, 45]`.
    pub yaw: f64,
    /// `[-1, 1]`; positive is a smile.
    pub mouth_curve: f64,
    /// `[0, 1]`.
    pub wrinkle_density: f64,
    /// Ratio, `[0.6, 1.4]`.
    pub jaw_width: f64,
    /// `[0, 1]`.
    pub glasses_opacity: f64,
    pub identity_features: Vec<f64>,
    /// `[0, 1]`; amount of rendering artifacts.
    pub noise_level: f64,
}

impl FaceParams {
    pub fn clamped(self) -> Self {
        Self {
            yaw: self.yaw.clamp(-YAW_SPAN, YAW_SPAN),
            mouth_curve: self.mouth_curve.clamp(-1.0, 1.0),
            wrinkle_density: self.wrinkle_density.clamp(0.0, 1.0),
            jaw_width: self.jaw_width.clamp(1.0 - JAW_SPAN, 1.0 + JAW_SPAN),
            glasses_opacity: self.glasses_opacity.clamp(0.0, 1.0),
            identity_features: self.identity_features,
            noise_level: self.noise_level.clamp(0.0, 1.0),
        }
    }

    /// Largest absolute difference over all fields, with yaw measured in
    /// units of its span.
    pub fn max_abs_diff(&self, other: &FaceParams) -> f64 {
        let mut d = [
            (self.yaw - other.yaw).abs() / YAW_SPAN,
            (self.mouth_curve - other.mouth_curve).abs(),
            (self.wrinkle_density - other.wrinkle_density).abs(),
            (self.jaw_width - other.jaw_width).abs(),
            (self.glasses_opacity - other.glasses_opacity).abs(),
            (self.noise_level - other.noise_level).abs(),
        ]
        .into_iter()
        .fold(0.0, f64::max);
        for (a, b) in self.identity_features.iter().zip(&other.identity_features) {
            d = d.max((a - b).abs());
        }
        d
    }
}

/// The five rendered semantic channels, in the order the face uses them.
const FACE_CHANNELS: [&str; 5] = DEFAULT_ATTRIBUTES;

/// A fully built generator. Immutable.
#[derive(Debug, Clone)]
pub struct GeneratorSpec {
    config: GeneratorConfig,
    /// Gram matrix actually realized (the configured one, repaired if it
    /// was not positive semidefinite).
    gram: Vec<Vec<f64>>,
    normals: Vec<Vec<f64>>,
    quality: Vec<f64>,
    identity: Vec<Vec<f64>>,
    rotation: DMatrix<f64>,
    /// `Rᵀ` applied to each normal, quality and identity vector; lets W
    /// generators score Z codes without forming `w`.
    pulled_back: Option<PulledBack>,
    face_index: [Option<usize>; 5],
}

#[derive(Debug, Clone)]
struct PulledBack {
    normals: Vec<Vec<f64>>,
    quality: Vec<f64>,
    identity: Vec<Vec<f64>>,
}

/// Builds a generator from `config`.
pub fn make_generator(config: GeneratorConfig) -> Result<GeneratorSpec> {
    config.validate()?;
    let m = config.attributes.len();
    let d = config.dim;
    let k = config.identity_dims;

    let target = DMatrix::from_fn(m, m, |i, j| config.gram[i][j]);
    let factor = correlation_factor(&target)?;

    let frame = signed_axes(d, m + 1 + k, config.seed, 0);
    let normals: Vec<Vec<f64>> = (0..m)
        .map(|i| {
            let mut n = vec![0.0; d];
            for j in 0..m {
                let c = factor[(i, j)];
                for (nr, q) in n.iter_mut().zip(frame.column(j).iter()) {
                    *nr += c * q;
                }
            }
            n
        })
        .collect();
    let quality = frame.column(m).iter().copied().collect();
    let identity = (0..k).map(|j| frame.column(m + 1 + j).iter().copied().collect()).collect();
    let gram = (0..m).map(|i| (0..m).map(|j| dot(&normals[i], &normals[j])).collect()).collect();
    let rotation = orthonormal_columns(d, d, config.seed, 1);

    let mut face_index = [None; 5];
    for (slot, name) in face_index.iter_mut().zip(FACE_CHANNELS) {
        *slot = config.attributes.iter().position(|a| a == name);
    }

    let mut spec = GeneratorSpec {
        config,
        gram,
        normals,
        quality,
        identity,
        rotation,
        pulled_back: None,
        face_index,
    };
    if spec.config.space == Space::W {
        let pull = |v: &Vec<f64>| spec.rotation.tr_mul(&DMatrix::from_column_slice(d, 1, v)).as_slice().to_vec();
        spec.pulled_back = Some(PulledBack {
            normals: spec.normals.iter().map(pull).collect(),
            quality: pull(&spec.quality),
            identity: spec.identity.iter().map(pull).collect(),
        });
    }
    Ok(spec)
}

/// `m×m` factor `L` with unit-norm rows and `LLᵀ` equal to the (repaired)
/// target correlation matrix.
fn correlation_factor(target: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let m = target.nrows();
    if let Some(chol) = target.clone().cholesky() {
        return Ok(chol.l());
    }
    let repaired = nearest_correlation(target)?;
    let eig = SymmetricEigen::new(repaired);
    let mut l = DMatrix::zeros(m, m);
    for j in 0..m {
        let s = eig.eigenvalues[j].max(0.0).sqrt();
        for i in 0..m {
            l[(i, j)] = eig.eigenvectors[(i, j)] * s;
        }
    }
    for i in 0..m {
        let n = l.row(i).norm();
        if n <= 0.0 {
            return Err(OracleError::GramNotRepairable { min_eigenvalue: eig.eigenvalues.min() });
        }
        l.row_mut(i).scale_mut(1.0 / n);
    }
    Ok(l)
}

/// Alternating projections with Dykstra's correction between the PSD cone
/// and the unit-diagonal affine set.
pub fn nearest_correlation(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let m = a.nrows();
    let psd = |x: DMatrix<f64>| {
        let mut e = SymmetricEigen::new(x);
        e.eigenvalues.iter_mut().for_each(|v| *v = v.max(0.0));
        e.recompose()
    };
    let mut y = a.clone();
    let mut correction = DMatrix::zeros(m, m);
    for _ in 0..MAX_PSD_ITERATIONS {
        let r = &y - &correction;
        let x = psd(r.clone());
        correction = &x - &r;
        let mut next = x.clone();
        for i in 0..m {
            next[(i, i)] = 1.0;
        }
        let change = (&next - &y).norm();
        y = next;
        if change < 1e-12 && (&y - &x).norm() < 1e-12 {
            break;
        }
    }
    let min_eigenvalue = y.clone().symmetric_eigenvalues().min();
    if !min_eigenvalue.is_finite() || min_eigenvalue < -1e-8 {
        return Err(OracleError::GramNotRepairable { min_eigenvalue });
    }
    Ok(y)
}

/// First `cols` columns of a Haar-distributed orthogonal `dim×dim` matrix.
fn orthonormal_columns(dim: usize, cols: usize, seed: u64, stream: u64) -> DMatrix<f64> {
    let mut rng = rng::stream(seed, stream);
    let g = DMatrix::from_fn(dim, cols, |_, _| StandardNormal.sample(&mut rng));
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    // Sign-fix so the distribution does not depend on the QR convention.
    for j in 0..cols {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

/// `cols` distinct signed coordinate axes chosen at random. Vectors built
/// from disjoint sets of these columns are orthogonal in exact arithmetic,
/// so edits along one never perturb coordinates along another.
fn signed_axes(dim: usize, cols: usize, seed: u64, stream: u64) -> DMatrix<f64> {
    let mut rng = rng::stream(seed, stream);
    let mut axes: Vec<usize> = (0..dim).collect();
    axes.shuffle(&mut rng);
    let mut out = DMatrix::zeros(dim, cols);
    for (j, &axis) in axes[..cols].iter().enumerate() {
        out[(axis, j)] = if rng.random::<bool>() { 1.0 } else { -1.0 };
    }
    out
}

impl GeneratorSpec {
    pub fn config(&self) -> &GeneratorConfig {
        &self.config
    }

    pub fn dim(&self) -> usize {
        self.config.dim
    }

    pub fn attributes(&self) -> &[String] {
        &self.config.attributes
    }

    pub fn attribute_index(&self, name: &str) -> Result<usize> {
        self.config
            .attributes
            .iter()
            .position(|a| a == name)
            .ok_or_else(|| OracleError::UnknownAttribute(name.to_string()))
    }

    /// Space in which scores are linear.
    pub fn space(&self) -> Space {
        self.config.space
    }

    pub fn lambdas(&self) -> &[f64] {
        &self.config.lambdas
    }

    pub fn noise_sigma(&self) -> f64 {
        self.config.noise_sigma
    }

    pub fn realized_gram(&self) -> &[Vec<f64>] {
        &self.gram
    }

    /// Planted unit normal of attribute `i`.
    pub fn normal(&self, i: usize) -> &[f64] {
        &self.normals[i]
    }

    pub fn quality_dir(&self) -> &[f64] {
        &self.quality
    }

    pub fn identity_dirs(&self) -> &[Vec<f64>] {
        &self.identity
    }

    pub fn warp_rotation(&self) -> &DMatrix<f64> {
        &self.rotation
    }

    pub fn warp_scale(&self) -> f64 {
        self.config.warp_scale
    }

    /// Planted direction of `name` as a [`SemanticDirection`] in the
    /// generator's semantic space.
    pub fn ground_truth(&self, name: &str) -> Result<SemanticDirection> {
        let normal = if name == QUALITY {
            self.quality.clone()
        } else {
            self.normals[self.attribute_index(name)?].clone()
        };
        let meta = DirectionMeta { seed: self.config.seed, train_count: 0, val_accuracy: 1.0 };
        Ok(SemanticDirection::new(name, normal, 0.0, self.config.space, meta)?)
    }

    /// Inner products of `code` with the attribute normals, the quality axis
    /// and the identity axes, evaluated in the semantic space.
    fn coordinates(&self, code: &LatentCode) -> Result<Coordinates> {
        if code.dim() != self.dim() {
            return Err(GeometryError::DimensionMismatch { expected: self.dim(), found: code.dim() }.into());
        }
        let project = |u: &[f64], normals: &[Vec<f64>], quality: &[f64], identity: &[Vec<f64>]| Coordinates {
            attributes: normals.iter().map(|n| dot(n, u)).collect(),
            quality: dot(quality, u),
            identity: identity.iter().map(|p| dot(p, u)).collect(),
        };
        match (self.config.space, code.space()) {
            (Space::Z, Space::Z) | (Space::W, Space::W) => {
                Ok(project(code.values(), &self.normals, &self.quality, &self.identity))
            }
            (Space::Z, Space::W) => {
                let z = unwarp(self, code)?;
                Ok(project(z.values(), &self.normals, &self.quality, &self.identity))
            }
            (Space::W, Space::Z) => {
                let pb = self.pulled_back.as_ref().expect("W generators carry pulled-back axes");
                let s = self.config.warp_scale;
                let t: Vec<f64> = code.values().iter().map(|z| (s * z).tanh() / s).collect();
                Ok(project(&t, &pb.normals, &pb.quality, &pb.identity))
            }
        }
    }

    /// Signed distance `qᵀu` along the quality axis.
    pub fn quality_projection(&self, code: &LatentCode) -> Result<f64> {
        Ok(self.coordinates(code)?.quality)
    }

    /// Signed distances `nᵢᵀu` to the planted boundaries.
    pub fn projections(&self, code: &LatentCode) -> Result<Vec<f64>> {
        Ok(self.coordinates(code)?.attributes)
    }

    /// Noiseless scores `tanh(λᵢ nᵢᵀu)`.
    pub fn semantic_scores(&self, code: &LatentCode) -> Result<Vec<f64>> {
        let c = self.coordinates(code)?;
        Ok(c.attributes.iter().zip(&self.config.lambdas).map(|(a, l)| (l * a).tanh()).collect())
    }

    /// Linear-regime scores `λᵢ nᵢᵀu` (no saturation, no noise).
    pub fn linear_scores(&self, code: &LatentCode) -> Result<Vec<f64>> {
        let c = self.coordinates(code)?;
        Ok(c.attributes.iter().zip(&self.config.lambdas).map(|(a, l)| l * a).collect())
    }

    /// Classifier-style scores: saturated response plus pseudo-noise keyed
    /// by the generator seed, the exact code and the attribute index.
    pub fn score(&self, code: &LatentCode) -> Result<AttributeScoreVector> {
        let mut scores = self.semantic_scores(code)?;
        for (i, s) in scores.iter_mut().enumerate() {
            *s += self.noise(code, i);
        }
        Ok(AttributeScoreVector { scores })
    }

    /// Score along the quality axis, `tanh(qᵀu)` plus noise.
    pub fn quality_score(&self, code: &LatentCode) -> Result<f64> {
        let c = self.coordinates(code)?;
        Ok(c.quality.tanh() + self.noise(code, self.config.attributes.len()))
    }

    fn noise(&self, code: &LatentCode, index: usize) -> f64 {
        let sigma = self.config.noise_sigma;
        if sigma == 0.0 {
            return 0.0;
        }
        let tag = match code.space() {
            Space::Z => 0x5a,
            Space::W => 0x57,
        };
        let key = rng::hash_f64s(self.config.seed ^ tag, code.values());
        let mut r = rng::stream(key, index as u64);
        let e: f64 = StandardNormal.sample(&mut r);
        sigma * e
    }

    /// Ground-truth binary label of attribute `attr` (`+1` on ties).
    pub fn label(&self, code: &LatentCode, attr: &str) -> Result<i8> {
        let i = self.attribute_index(attr)?;
        let a = self.coordinates(code)?.attributes[i];
        Ok(if a >= 0.0 { 1 } else { -1 })
    }

    /// Face description driven by the noiseless semantic response.
    pub fn face_params(&self, code: &LatentCode) -> Result<FaceParams> {
        let c = self.coordinates(code)?;
        let s = |slot: usize| {
            self.face_index[slot]
                .map(|i| (self.config.lambdas[i] * c.attributes[i]).tanh())
                .unwrap_or(0.0)
        };
        Ok(FaceParams {
            yaw: YAW_SPAN * s(0),
            mouth_curve: s(1),
            wrinkle_density: (s(2) + 1.0) / 2.0,
            jaw_width: 1.0 + JAW_SPAN * s(3),
            glasses_opacity: (s(4) + 1.0) / 2.0,
            identity_features: c.identity,
            noise_level: -c.quality / NOISE_SPAN,
        }
        .clamped())
    }
}

struct Coordinates {
    attributes: Vec<f64>,
    quality: f64,
    identity: Vec<f64>,
}

/// `w = R tanh(s z) / s`.
pub fn warp(gen: &GeneratorSpec, z: &LatentCode) -> Result<LatentCode> {
    if z.space() != Space::Z {
        return Err(GeometryError::SpaceMismatch { expected: Space::Z, found: z.space() }.into());
    }
    let d = gen.dim();
    if z.dim() != d {
        return Err(GeometryError::DimensionMismatch { expected: d, found: z.dim() }.into());
    }
    let s = gen.warp_scale();
    let t = DMatrix::from_iterator(d, 1, z.values().iter().map(|v| (s * v).tanh() / s));
    let w = &gen.rotation * t;
    Ok(LatentCode::new(w.as_slice().to_vec(), Space::W)?)
}

/// Exact inverse of [`warp`].
pub fn unwarp(gen: &GeneratorSpec, w: &LatentCode) -> Result<LatentCode> {
    if w.space() != Space::W {
        return Err(GeometryError::SpaceMismatch { expected: Space::W, found: w.space() }.into());
    }
    let d = gen.dim();
    if w.dim() != d {
        return Err(GeometryError::DimensionMismatch { expected: d, found: w.dim() }.into());
    }
    let s = gen.warp_scale();
    let u = gen.rotation.tr_mul(&DMatrix::from_column_slice(d, 1, w.values()));
    let mut z = Vec::with_capacity(d);
    for (index, &value) in u.iter().enumerate() {
        if (s * value).abs() >= 1.0 {
            return Err(OracleError::OutOfRange { index, value });
        }
        z.push((s * value).atanh() / s);
    }
    Ok(LatentCode::new(z, Space::Z)?)
}

/// Result of [`invert`].
#[derive(Debug, Clone, PartialEq)]
pub struct Inversion {
    pub code: LatentCode,
    pub objective: f64,
    pub steps: usize,
}

/// Recovers a Z code whose face parameters match `target`.
///
/// Gradient descent with backtracking on the squared residual of every face
/// channel. Channels are compared on the score scale (yaw divided by its
/// span, jaw width by its span, densities mapped back to `[-1, 1]`) so that
/// each contributes comparably. The clamped noise channel is replaced by
/// its smooth equivalent: a plain residual for targets strictly inside
/// `(0, 1)` and a squared hinge for targets at either end.
pub fn invert(gen: &GeneratorSpec, target: &FaceParams, init_seed: u64) -> Result<Inversion> {
    let k = gen.identity_dirs().len();
    if target.identity_features.len() != k {
        return Err(OracleError::InvalidTarget { channel: "identity_features", value: target.identity_features.len() as f64 });
    }
    let wanted = target_scores(target)?;
    let channels: Vec<(usize, f64)> = gen
        .face_index
        .iter()
        .zip(wanted)
        .filter_map(|(slot, s)| slot.map(|i| (i, s)))
        .collect();

    let d = gen.dim();
    let mut u = rng::normal_vec(&mut rng::seeded(init_seed), d);
    if gen.space() == Space::W {
        // Start inside the warp range.
        let s = gen.warp_scale();
        u.iter_mut().for_each(|v| *v = (s * *v).tanh() / s * 0.5);
    }

    let evaluate = |u: &[f64], grad: Option<&mut Vec<f64>>| -> f64 {
        let mut f = 0.0;
        let mut terms: Vec<(f64, &[f64], f64)> = Vec::with_capacity(channels.len() + k + 1);
        for &(i, t) in &channels {
            let l = gen.config.lambdas[i];
            let s = (l * dot(&gen.normals[i], u)).tanh();
            let r = s - t;
            f += r * r;
            terms.push((r, &gen.normals[i], l * (1.0 - s * s)));
        }
        for (p, t) in gen.identity.iter().zip(&target.identity_features) {
            let r = dot(p, u) - t;
            f += r * r;
            terms.push((r, p, 1.0));
        }
        // Inside (0, 1) the target pins the quality coordinate; at either end
        // it only bounds it, which becomes a one-sided (hinge) residual.
        let v = -dot(&gen.quality, u) / NOISE_SPAN;
        let t = target.noise_level;
        let r = if t <= 0.0 {
            v.max(0.0)
        } else if t >= 1.0 {
            (v - 1.0).min(0.0)
        } else {
            v - t
        };
        f += r * r;
        terms.push((r, &gen.quality, -1.0 / NOISE_SPAN));
        if let Some(g) = grad {
            g.iter_mut().for_each(|v| *v = 0.0);
            for (r, axis, slope) in terms {
                let c = 2.0 * r * slope;
                for (gi, a) in g.iter_mut().zip(axis) {
                    *gi += c * a;
                }
            }
        }
        f
    };

    let mut grad = vec![0.0; d];
    let mut f = evaluate(&u, Some(&mut grad));
    let mut step = 1.0;
    let mut steps = 0;
    let mut trial = vec![0.0; d];
    while steps < MAX_INVERT_STEPS && f > INVERT_TOLERANCE * 1e-10 {
        steps += 1;
        let g2 = dot(&grad, &grad);
        if g2 == 0.0 {
            break;
        }
        let mut accepted = false;
        for _ in 0..60 {
            for ((t, ui), gi) in trial.iter_mut().zip(&u).zip(&grad) {
                *t = ui - step * gi;
            }
            let ft = evaluate(&trial, None);
            if ft <= f - 0.5 * step * g2 {
                std::mem::swap(&mut u, &mut trial);
                f = evaluate(&u, Some(&mut grad));
                accepted = true;
                step *= 2.0;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    if !(f <= INVERT_TOLERANCE) {
        return Err(OracleError::NoConvergence { steps, objective: f });
    }
    let code = match gen.space() {
        Space::Z => LatentCode::new(u, Space::Z)?,
        Space::W => unwarp(gen, &LatentCode::new(u, Space::W)?)?,
    };
    Ok(Inversion { code, objective: f, steps })
}

/// Scores implied by the five semantic face channels.
fn target_scores(t: &FaceParams) -> Result<[f64; 5]> {
    let checks: [(&'static str, f64, f64, f64); 6] = [
        ("yaw", t.yaw, -YAW_SPAN, YAW_SPAN),
        ("mouth_curve", t.mouth_curve, -1.0, 1.0),
        ("wrinkle_density", t.wrinkle_density, 0.0, 1.0),
        ("jaw_width", t.jaw_width, 1.0 - JAW_SPAN, 1.0 + JAW_SPAN),
        ("glasses_opacity", t.glasses_opacity, 0.0, 1.0),
        ("noise_level", t.noise_level, 0.0, 1.0),
    ];
    for (channel, value, lo, hi) in checks {
        if !(value >= lo && value <= hi) {
            return Err(OracleError::InvalidTarget { channel, value });
        }
    }
    if t.identity_features.iter().any(|v| !v.is_finite()) {
        return Err(OracleError::InvalidTarget { channel: "identity_features", value: f64::NAN });
    }
    let scores = [
        t.yaw / YAW_SPAN,
        t.mouth_curve,
        2.0 * t.wrinkle_density - 1.0,
        (t.jaw_width - 1.0) / JAW_SPAN,
        2.0 * t.glasses_opacity - 1.0,
    ];
    for (channel, s) in FACE_CHANNELS.into_iter().zip(scores) {
        if s.abs() >= 1.0 {
            return Err(OracleError::SaturatedTarget { channel, score: s });
        }
    }
    Ok(scores)
}

/// Scalable-vector-graphics drawing of a face. Pure and byte-stable.
pub fn render(params: &FaceParams) -> String {
    use std::fmt::Write;

    let p = params.clone().clamped();
    let feat = |i: usize| p.identity_features.get(i).copied().unwrap_or(0.0).tanh();
    let hue = 28.0 + 12.0 * feat(0);
    let eye_gap = 30.0 + 8.0 * feat(1);
    let face_h = 92.0 * (1.0 + 0.08 * feat(2));
    let face_w = 66.0 * p.jaw_width;
    let (cx, cy) = (128.0, 132.0);
    let turn = p.yaw / YAW_SPAN * 22.0;

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="256" height="256" viewBox="0 0 256 256">"#
    );
    let _ = writeln!(svg, r##"<rect width="256" height="256" fill="#f4f4f4"/>"##);
    let _ = writeln!(
        svg,
        r##"<ellipse id="head" cx="{cx:.2}" cy="{cy:.2}" rx="{face_w:.3}" ry="{face_h:.3}" fill="hsl({hue:.1},55%,72%)" stroke="#5a3d2b" stroke-width="2"/>"##
    );
    let eye_y = cy - 0.2 * face_h;
    for side in [-1.0, 1.0] {
        let ex = cx + turn + side * eye_gap / 2.0 * (1.0 - 0.3 * (p.yaw / YAW_SPAN).abs());
        let _ = writeln!(svg, r##"<circle class="eye" cx="{ex:.3}" cy="{eye_y:.3}" r="5" fill="#2b2b2b"/>"##);
    }
    let _ = writeln!(
        svg,
        r##"<path id="nose" d="M {:.3} {:.3} L {:.3} {:.3}" stroke="#5a3d2b" stroke-width="2" fill="none"/>"##,
        cx + turn,
        cy - 0.05 * face_h,
        cx + turn * 1.3,
        cy + 0.18 * face_h
    );
    let mouth_y = cy + 0.45 * face_h;
    let half = 0.35 * face_w;
    let _ = writeln!(
        svg,
        r##"<path id="mouth" d="M {:.3} {mouth_y:.3} Q {:.3} {:.3} {:.3} {mouth_y:.3}" stroke="#8b2e2e" stroke-width="3" fill="none"/>"##,
        cx + turn - half,
        cx + turn,
        mouth_y + 24.0 * p.mouth_curve,
        cx + turn + half,
    );

    let wrinkles = (10.0 * p.wrinkle_density).round() as usize;
    for i in 0..wrinkles {
        let y = cy - 0.75 * face_h + 4.0 * i as f64;
        let w = 0.5 * face_w * (1.0 - 0.03 * i as f64);
        let _ = writeln!(
            svg,
            r##"<path class="wrinkle" d="M {:.3} {y:.3} q {w:.3} -3 {:.3} 0" stroke="#7a5a44" stroke-width="1" fill="none"/>"##,
            cx + turn - w,
            2.0 * w
        );
    }

    if p.glasses_opacity > 0.05 {
        let _ = writeln!(svg, r#"<g id="glasses" opacity="{:.4}">"#, p.glasses_opacity);
        for side in [-1.0, 1.0] {
            let ex = cx + turn + side * eye_gap / 2.0 * (1.0 - 0.3 * (p.yaw / YAW_SPAN).abs());
            let _ = writeln!(
                svg,
                r##"<circle cx="{ex:.3}" cy="{eye_y:.3}" r="13" stroke="#111111" stroke-width="3" fill="none"/>"##
            );
        }
        let _ = writeln!(
            svg,
            r##"<line x1="{:.3}" y1="{eye_y:.3}" x2="{:.3}" y2="{eye_y:.3}" stroke="#111111" stroke-width="3"/>"##,
            cx + turn - 4.0,
            cx + turn + 4.0
        );
        svg.push_str("</g>\n");
    }

    let jitter = (40.0 * p.noise_level).round() as usize;
    if jitter > 0 {
        let mut values = vec![p.yaw, p.mouth_curve, p.wrinkle_density, p.jaw_width, p.glasses_opacity, p.noise_level];
        values.extend_from_slice(&p.identity_features);
        let mut r = rng::seeded(rng::hash_f64s(0x6a17, &values));
        for _ in 0..jitter {
            let x: f64 = r.random_range(16.0..240.0);
            let y: f64 = r.random_range(16.0..240.0);
            let dx: f64 = r.random_range(-12.0..12.0);
            let dy: f64 = r.random_range(-12.0..12.0);
            let _ = writeln!(
                svg,
                r##"<line class="jitter" x1="{x:.2}" y1="{y:.2}" x2="{:.2}" y2="{:.2}" stroke="#c03030" stroke-width="1.5" opacity="0.7"/>"##,
                x + dx,
                y + dy
            );
        }
    }
    svg.push_str("</svg>\n");
    svg
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(config: GeneratorConfig) -> GeneratorSpec {
        make_generator(config.with_dim(32)).unwrap()
    }

    fn scaled(v: &[f64], a: f64) -> LatentCode {
        LatentCode::new(v.iter().map(|x| a * x).collect(), Space::Z).unwrap()
    }

    #[test]
    fn orthogonal_config_gives_orthonormal_normals() {
        let g = small(GeneratorConfig::orthogonal());
        for i in 0..5 {
            for j in 0..5 {
                let c = dot(g.normal(i), g.normal(j));
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((c - want).abs() < 1e-9, "({i},{j}) = {c}");
            }
        }
    }

    #[test]
    fn default_gram_is_realized() {
        let g = small(GeneratorConfig::default());
        for i in 0..5 {
            for j in 0..5 {
                assert!((dot(g.normal(i), g.normal(j)) - DEFAULT_GRAM[i][j]).abs() < 1e-9);
            }
        }
        let (age, gender) = (g.attribute_index("age").unwrap(), g.attribute_index("gender").unwrap());
        assert!((dot(g.normal(age), g.normal(gender)) - 0.49).abs() < 1e-9);
    }

    #[test]
    fn identity_and_quality_are_orthogonal_to_semantics() {
        let g = small(GeneratorConfig::default());
        for p in g.identity_dirs() {
            assert!(dot(p, g.quality_dir()).abs() < 1e-9);
            for i in 0..5 {
                assert!(dot(p, g.normal(i)).abs() < 1e-9);
            }
        }
        for i in 0..5 {
            assert!(dot(g.quality_dir(), g.normal(i)).abs() < 1e-9);
        }
    }

    #[test]
    fn non_psd_gram_is_repaired() {
        // Three attributes that cannot be pairwise this correlated.
        let gram = vec![vec![1.0, 0.9, -0.9], vec![0.9, 1.0, 0.9], vec![-0.9, 0.9, 1.0]];
        let eig = DMatrix::from_fn(3, 3, |i, j| gram[i][j]).symmetric_eigenvalues();
        assert!(eig.min() < 0.0);
        let config = GeneratorConfig {
            attributes: vec!["a".into(), "b".into(), "c".into()],
            gram,
            lambdas: vec![0.5; 3],
            ..GeneratorConfig::default()
        };
        let g = small(config);
        let realized = DMatrix::from_fn(3, 3, |i, j| g.realized_gram()[i][j]);
        assert!(realized.clone().symmetric_eigenvalues().min() > -1e-9);
        for i in 0..3 {
            assert!((realized[(i, i)] - 1.0).abs() < 1e-9);
            for j in 0..3 {
                assert!((dot(g.normal(i), g.normal(j)) - realized[(i, j)]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn config_validation() {
        let too_small = make_generator(GeneratorConfig::default().with_dim(10));
        assert!(matches!(too_small, Err(OracleError::DimensionTooSmall { dim: 10, required: 14 })));
        let mut asym = GeneratorConfig::default();
        asym.gram[0][1] = 0.3;
        assert!(matches!(make_generator(asym), Err(OracleError::InvalidConfig(_))));
        let mut dup = GeneratorConfig::default();
        dup.attributes[1] = "pose".into();
        assert!(matches!(make_generator(dup), Err(OracleError::InvalidConfig(_))));
    }

    #[test]
    fn generator_is_deterministic() {
        let a = small(GeneratorConfig::default().with_seed(3));
        let b = small(GeneratorConfig::default().with_seed(3));
        let c = small(GeneratorConfig::default().with_seed(4));
        assert_eq!(a.normal(2), b.normal(2));
        assert_ne!(a.normal(2), c.normal(2));
    }

    #[test]
    fn score_examples() {
        let g = small(GeneratorConfig::default().with_noise(0.0));
        let zero = LatentCode::zeros(32, Space::Z).unwrap();
        assert!(g.score(&zero).unwrap().scores.iter().all(|s| *s == 0.0));

        let far = scaled(g.normal(2), 60.0);
        assert!((g.score(&far).unwrap().scores[2] - 1.0).abs() < 1e-12);

        // λ = 0.5 and nᵀz = 1 gives tanh(0.5).
        let unit = scaled(g.normal(1), 1.0);
        let s = g.score(&unit).unwrap().scores[1];
        assert!((s - 0.462_117_157_260_009_8).abs() < 1e-12, "{s}");
    }

    #[test]
    fn noise_is_replayable() {
        let g = small(GeneratorConfig::default().with_noise(0.1));
        let z = scaled(g.normal(0), 0.3);
        let a = g.score(&z).unwrap();
        assert_eq!(a, g.score(&z).unwrap());
        assert_ne!(a.scores[0], g.semantic_scores(&z).unwrap()[0]);
    }

    #[test]
    fn label_examples() {
        let g = small(GeneratorConfig::default());
        assert_eq!(g.label(&scaled(g.normal(3), 1.0), "gender").unwrap(), 1);
        assert_eq!(g.label(&scaled(g.normal(3), -1.0), "gender").unwrap(), -1);
        assert_eq!(g.label(&LatentCode::zeros(32, Space::Z).unwrap(), "gender").unwrap(), 1);
        assert!(matches!(
            g.label(&LatentCode::zeros(32, Space::Z).unwrap(), "hair"),
            Err(OracleError::UnknownAttribute(_))
        ));
    }

    #[test]
    fn face_params_examples() {
        let g = small(GeneratorConfig::default());
        let p = g.face_params(&LatentCode::zeros(32, Space::Z).unwrap()).unwrap();
        assert_eq!((p.yaw, p.mouth_curve, p.noise_level), (0.0, 0.0, 0.0));
        assert_eq!(p.jaw_width, 1.0);
        assert_eq!(p.identity_features.len(), 8);

        let clean = g.face_params(&scaled(g.quality_dir(), 3.0)).unwrap();
        assert_eq!(clean.noise_level, 0.0);
        let dirty = g.face_params(&scaled(g.quality_dir(), -2.5)).unwrap();
        assert!((dirty.noise_level - 0.5).abs() < 1e-12);

        let age = g.ground_truth("age").unwrap();
        let mut last = f64::NEG_INFINITY;
        for k in 0..=30 {
            let z = geometry::edit(&LatentCode::zeros(32, Space::Z).unwrap(), &age, k as f64 * 0.1).unwrap();
            let w = g.face_params(&z).unwrap().wrinkle_density;
            assert!(w >= last);
            last = w;
        }
    }

    #[test]
    fn render_examples() {
        let g = small(GeneratorConfig::default());
        let mut p = g.face_params(&scaled(g.normal(4), -1.0)).unwrap();
        p.glasses_opacity = 0.0;
        let doc = render(&p);
        assert!(!doc.contains("id=\"glasses\""));
        assert_eq!(doc, render(&p));

        p.glasses_opacity = 0.6;
        p.wrinkle_density = 0.5;
        p.noise_level = 0.25;
        let doc = render(&p);
        assert!(doc.contains(r#"<g id="glasses" opacity="0.6000">"#));
        assert_eq!(doc.matches("class=\"wrinkle\"").count(), 5);
        assert_eq!(doc.matches("class=\"jitter\"").count(), 10);
        assert!(doc.starts_with("<svg") && doc.ends_with("</svg>\n"));
    }

    #[test]
    fn warp_round_trip() {
        let g = small(GeneratorConfig::default());
        let zero = LatentCode::zeros(32, Space::Z).unwrap();
        assert!(warp(&g, &zero).unwrap().values().iter().all(|v| *v == 0.0));
        let mut r = rng::seeded(5);
        for _ in 0..20 {
            let v: Vec<f64> = rng::normal_vec(&mut r, 32).into_iter().map(|x| x.clamp(-3.0, 3.0)).collect();
            let z = LatentCode::new(v, Space::Z).unwrap();
            let w = warp(&g, &z).unwrap();
            assert!(geometry::norm(w.values()) <= geometry::norm(z.values()) + 1e-12);
            let back = unwarp(&g, &w).unwrap();
            for (a, b) in back.values().iter().zip(z.values()) {
                assert!((a - b).abs() < 1e-9);
            }
        }
        let mut big = vec![0.0; 32];
        big[0] = 1.5;
        let w = LatentCode::new(g.warp_rotation().column(0).iter().map(|v| v * 1.5).collect(), Space::W).unwrap();
        assert!(matches!(unwarp(&g, &w), Err(OracleError::OutOfRange { index: 0, .. })));
    }

    #[test]
    fn w_generator_is_linear_in_w() {
        let g = small(GeneratorConfig::default().with_space(Space::W).with_noise(0.0));
        let mut r = rng::seeded(2);
        let z = LatentCode::new(rng::normal_vec(&mut r, 32), Space::Z).unwrap();
        let w = warp(&g, &z).unwrap();
        let via_z = g.semantic_scores(&z).unwrap();
        let via_w = g.semantic_scores(&w).unwrap();
        for (a, b) in via_z.iter().zip(&via_w) {
            assert!((a - b).abs() < 1e-12);
        }
        let direct = (0.5 * dot(g.normal(0), w.values())).tanh();
        assert!((via_w[0] - direct).abs() < 1e-12);
    }

    #[test]
    fn invert_recovers_origin_target() {
        let g = small(GeneratorConfig::default());
        let target = g.face_params(&LatentCode::zeros(32, Space::Z).unwrap()).unwrap();
        let inv = invert(&g, &target, 11).unwrap();
        assert!(g.face_params(&inv.code).unwrap().max_abs_diff(&target) < 1e-3);
        assert_eq!(inv, invert(&g, &target, 11).unwrap());
    }

    #[test]
    fn invert_rejects_saturated_target() {
        let g = small(GeneratorConfig::default());
        let mut target = g.face_params(&LatentCode::zeros(32, Space::Z).unwrap()).unwrap();
        target.glasses_opacity = 1.0;
        assert!(matches!(
            invert(&g, &target, 0),
            Err(OracleError::SaturatedTarget { channel: "eyeglasses", .. })
        ));
    }
}
