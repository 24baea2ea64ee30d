//! HTTP API over a generator, a boundary set and a single editing session.
//!
//! | method | path | body | result |
//! |---|---|---|---|
//! | GET | `/api/generator` | | configuration and realized Gram matrix |
//! | POST | `/api/sample` | `{"seed"?}` | new session at a Gaussian code |
//! | POST | `/api/edit` | [`ManipulationRequest`] | edited session and resolved direction |
//! | POST | `/api/invert` | `{"target", "init_seed"?}` | new session at the recovered code |
//! | GET | `/api/boundaries` | | loaded boundaries |
//! | POST | `/api/boundaries/fit` | `{"samples"?, "candidates"?, "seed"?}` | refit every boundary |
//! | GET | `/api/correlations` | | boundary cosines and score correlations |
//! | GET | `/api/render/current` | | SVG of the current face |
//!
//! Bodies are JSON with numbers written to 17 significant digits. Errors
//! come back as `{"error": kind, "message": ...}` with a 4xx or 5xx status.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};

use axum::extract::rejection::JsonRejection;
use axum::extract::State;
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use hypersem_core::geometry::{self, LatentCode, SemanticDirection, Space};
use hypersem_core::oracle::{self, FaceParams, GeneratorConfig, OracleError};
use hypersem_core::pipeline::{self, CorrelationReport, PipelineError, SampleDataset, DEFAULT_CANDIDATES, DEFAULT_SAMPLES};
use hypersem_core::{rng, GeneratorSpec, SvmConfig};
use serde::{Deserialize, Serialize};

use crate::json;
use crate::session::{Boundaries, ManipulationRequest, SessionError, SessionState};
use crate::store::{BoundaryStore, StoreError};

/// Default cap on samples synthesized by one fit request.
pub const DEFAULT_FIT_CAP: usize = 20_000;

/// JSON response written with [`json::to_string`].
pub struct Json17<T>(pub T);

impl<T: Serialize> IntoResponse for Json17<T> {
    fn into_response(self) -> Response {
        ([(header::CONTENT_TYPE, "application/json")], json::to_string(&self.0)).into_response()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
    pub message: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub conditions: Option<Vec<String>>,
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    body: ErrorBody,
}

impl ApiError {
    fn new(status: StatusCode, kind: &str, message: impl Into<String>) -> Self {
        Self { status, body: ErrorBody { error: kind.to_string(), message: message.into(), conditions: None } }
    }

    fn bad_request(kind: &str, message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, kind, message)
    }

    fn no_session() -> Self {
        Self::new(StatusCode::NOT_FOUND, "no_session", "no latent code yet; POST /api/sample first")
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json17(self.body)).into_response()
    }
}

impl From<SessionError> for ApiError {
    fn from(e: SessionError) -> Self {
        let kind = match &e {
            SessionError::UnknownAttribute(_) => "unknown_attribute",
            SessionError::SelfCondition(_) | SessionError::DuplicateCondition(_) | SessionError::NonFiniteAlpha => {
                "invalid_request"
            }
            SessionError::Degenerate { .. } => "degenerate_projection",
            SessionError::Geometry(_) => "geometry",
        };
        let mut err = Self::bad_request(kind, e.to_string());
        if let SessionError::Degenerate { conditions, .. } = e {
            err.body.conditions = Some(conditions);
        }
        err
    }
}

impl From<OracleError> for ApiError {
    fn from(e: OracleError) -> Self {
        match e {
            OracleError::NoConvergence { .. } => Self::new(StatusCode::UNPROCESSABLE_ENTITY, "no_convergence", e.to_string()),
            OracleError::SaturatedTarget { .. } | OracleError::InvalidTarget { .. } => {
                Self::bad_request("invalid_target", e.to_string())
            }
            OracleError::UnknownAttribute(_) => Self::bad_request("unknown_attribute", e.to_string()),
            _ => Self::bad_request("oracle", e.to_string()),
        }
    }
}

impl From<PipelineError> for ApiError {
    fn from(e: PipelineError) -> Self {
        Self::bad_request("pipeline", e.to_string())
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "store", e.to_string())
    }
}

impl From<geometry::GeometryError> for ApiError {
    fn from(e: geometry::GeometryError) -> Self {
        Self::bad_request("geometry", e.to_string())
    }
}

impl From<JsonRejection> for ApiError {
    fn from(e: JsonRejection) -> Self {
        Self::new(e.status(), "bad_body", e.body_text())
    }
}

type ApiResult<T> = Result<Json17<T>, ApiError>;

/// Shared server state.
pub struct AppState {
    generator: Arc<GeneratorSpec>,
    boundaries: RwLock<Arc<Boundaries>>,
    session: Mutex<Option<SessionState>>,
    /// Dataset behind the score correlations, from the last fit.
    dataset: Mutex<Option<Arc<SampleDataset>>>,
    store: Option<Mutex<BoundaryStore>>,
    fit_cap: usize,
    next_seed: AtomicU64,
}

impl AppState {
    /// `first_seed` is used by the first `/api/sample` call without a seed;
    /// later ones count up from it.
    pub fn new(generator: Arc<GeneratorSpec>, boundaries: Boundaries, store: Option<BoundaryStore>, fit_cap: usize, first_seed: u64) -> Self {
        Self {
            generator,
            boundaries: RwLock::new(Arc::new(boundaries)),
            session: Mutex::new(None),
            dataset: Mutex::new(None),
            store: store.map(Mutex::new),
            fit_cap,
            next_seed: AtomicU64::new(first_seed),
        }
    }

    pub fn generator(&self) -> &Arc<GeneratorSpec> {
        &self.generator
    }

    pub fn boundaries(&self) -> Arc<Boundaries> {
        self.boundaries.read().expect("boundary lock").clone()
    }

    /// Space of the loaded boundaries, or of the generator when none are.
    fn space(&self) -> Space {
        self.boundaries().values().next().map(SemanticDirection::space).unwrap_or(self.generator.space())
    }

    /// Expresses a Z code in the space edits happen in.
    fn to_session_space(&self, z: LatentCode) -> Result<LatentCode, ApiError> {
        Ok(match self.space() {
            Space::Z => z,
            Space::W => oracle::warp(&self.generator, &z)?,
        })
    }
}

/// Builds the router for `state`.
pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/api/generator", get(generator_info))
        .route("/api/sample", post(sample))
        .route("/api/edit", post(edit))
        .route("/api/invert", post(invert))
        .route("/api/boundaries", get(list_boundaries))
        .route("/api/boundaries/fit", post(fit_boundaries))
        .route("/api/correlations", get(correlations))
        .route("/api/render/current", get(render_current))
        .with_state(state)
}

/// Serves `state` on `listener` until the process is stopped.
pub async fn serve(listener: tokio::net::TcpListener, state: Arc<AppState>) -> std::io::Result<()> {
    axum::serve(listener, router(state)).await
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorInfo {
    pub config: GeneratorConfig,
    pub realized_gram: Vec<Vec<f64>>,
    pub space: Space,
}

async fn generator_info(State(app): State<Arc<AppState>>) -> Json17<GeneratorInfo> {
    let g = &app.generator;
    Json17(GeneratorInfo { config: g.config().clone(), realized_gram: g.realized_gram().to_vec(), space: g.space() })
}

/// Everything the editor displays about the current code.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentView {
    pub seed: u64,
    pub latent: LatentCode,
    pub attributes: Vec<String>,
    /// Noiseless semantic scores, in `attributes` order.
    pub scores: Vec<f64>,
    /// Signed distance to every loaded boundary.
    pub distances: BTreeMap<String, f64>,
    pub face: FaceParams,
    pub svg: String,
    pub history_len: usize,
}

fn view(s: &SessionState) -> Result<LatentView, ApiError> {
    let g = s.generator();
    let code = s.current();
    let face = g.face_params(code)?;
    let distances = s
        .boundaries()
        .iter()
        .map(|(name, b)| Ok((name.clone(), geometry::distance(b, code)?)))
        .collect::<Result<_, ApiError>>()?;
    Ok(LatentView {
        seed: s.seed(),
        latent: code.clone(),
        attributes: g.attributes().to_vec(),
        scores: g.semantic_scores(code)?,
        distances,
        svg: oracle::render(&face),
        face,
        history_len: s.history().len(),
    })
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SampleRequest {
    #[serde(default)]
    pub seed: Option<u64>,
}

async fn sample(State(app): State<Arc<AppState>>, body: Result<Json<SampleRequest>, JsonRejection>) -> ApiResult<LatentView> {
    let Json(req) = body?;
    let seed = req.seed.unwrap_or_else(|| app.next_seed.fetch_add(1, Ordering::Relaxed));
    let z = LatentCode::new(rng::normal_vec(&mut rng::seeded(seed), app.generator.dim()), Space::Z)?;
    let code = app.to_session_space(z)?;
    let s = SessionState::new(app.generator.clone(), app.boundaries(), seed, code);
    let v = view(&s)?;
    *app.session.lock().expect("session lock") = Some(s);
    Ok(Json17(v))
}

/// The direction an edit moved along, after conditioning.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolvedDirection {
    pub attribute: String,
    pub conditions: Vec<String>,
    pub space: Space,
    pub normal: Vec<f64>,
    /// Cosine against every loaded boundary.
    pub cosines: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EditResponse {
    #[serde(flatten)]
    pub view: LatentView,
    pub direction: ResolvedDirection,
}

/// Applies `req` to the session and reports the result.
pub fn api_edit(s: &mut SessionState, req: &ManipulationRequest) -> Result<EditResponse, ApiError> {
    let dir = s.apply(req)?;
    let cosines = s
        .boundaries()
        .iter()
        .map(|(name, b)| Ok((name.clone(), geometry::cosine(&dir, b)?)))
        .collect::<Result<_, ApiError>>()?;
    let direction = ResolvedDirection {
        attribute: req.attribute.clone(),
        conditions: req.conditions.clone(),
        space: dir.space(),
        normal: dir.normal().to_vec(),
        cosines,
    };
    Ok(EditResponse { view: view(s)?, direction })
}

async fn edit(State(app): State<Arc<AppState>>, body: Result<Json<ManipulationRequest>, JsonRejection>) -> ApiResult<EditResponse> {
    let Json(req) = body?;
    let mut guard = app.session.lock().expect("session lock");
    let s = guard.as_mut().ok_or_else(ApiError::no_session)?;
    Ok(Json17(api_edit(s, &req)?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvertRequest {
    pub target: FaceParams,
    #[serde(default)]
    pub init_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvertResponse {
    #[serde(flatten)]
    pub view: LatentView,
    pub objective: f64,
    pub steps: usize,
}

async fn invert(State(app): State<Arc<AppState>>, body: Result<Json<InvertRequest>, JsonRejection>) -> ApiResult<InvertResponse> {
    let Json(req) = body?;
    let inv = oracle::invert(&app.generator, &req.target, req.init_seed)?;
    let code = app.to_session_space(inv.code)?;
    let s = SessionState::new(app.generator.clone(), app.boundaries(), req.init_seed, code);
    let v = view(&s)?;
    *app.session.lock().expect("session lock") = Some(s);
    Ok(Json17(InvertResponse { view: v, objective: inv.objective, steps: inv.steps }))
}

/// One boundary as served by the API; same fields as a store file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryDoc {
    pub name: String,
    pub space: Space,
    pub dim: usize,
    pub normal: Vec<f64>,
    pub intercept: f64,
    pub meta: geometry::DirectionMeta,
}

impl From<&SemanticDirection> for BoundaryDoc {
    fn from(b: &SemanticDirection) -> Self {
        Self {
            name: b.name().to_string(),
            space: b.space(),
            dim: b.dim(),
            normal: b.normal().to_vec(),
            intercept: b.intercept(),
            meta: b.meta().clone(),
        }
    }
}

async fn list_boundaries(State(app): State<Arc<AppState>>) -> Json17<Vec<BoundaryDoc>> {
    Json17(app.boundaries().values().map(BoundaryDoc::from).collect())
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FitRequest {
    #[serde(default)]
    pub samples: Option<usize>,
    #[serde(default)]
    pub candidates: Option<usize>,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitSummary {
    pub name: String,
    pub train_accuracy: f64,
    pub val_accuracy: f64,
    pub all_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResponse {
    pub samples: usize,
    pub candidates: usize,
    pub seed: u64,
    pub space: Space,
    pub boundaries: Vec<FitSummary>,
}

/// Candidates per side for `samples` samples, keeping the 2,000 of 50,000
/// desk-scale ratio.
pub fn default_candidates(samples: usize) -> usize {
    (samples * DEFAULT_CANDIDATES / DEFAULT_SAMPLES).max(1)
}

async fn fit_boundaries(State(app): State<Arc<AppState>>, body: Result<Json<FitRequest>, JsonRejection>) -> ApiResult<FitResponse> {
    let Json(req) = body?;
    let samples = req.samples.unwrap_or(app.fit_cap);
    if samples > app.fit_cap {
        return Err(ApiError::bad_request("invalid_request", format!("samples = {samples} exceeds the cap of {}", app.fit_cap)));
    }
    let candidates = req.candidates.unwrap_or_else(|| default_candidates(samples));
    let app2 = app.clone();
    let (ds, bs) = tokio::task::spawn_blocking(move || -> Result<_, ApiError> {
        let g = &app2.generator;
        let ds = pipeline::synthesize_dataset(g, samples, req.seed)?;
        let fit_ds = match g.space() {
            Space::Z => ds.clone(),
            Space::W => pipeline::to_w_space(g, &ds)?,
        };
        let bs = pipeline::fit_all_boundaries(&fit_ds, g, candidates, &SvmConfig::default().with_seed(req.seed))?;
        Ok((ds, bs))
    })
    .await
    .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))??;

    let boundaries: Boundaries = bs.boundaries.iter().map(|(k, v)| (k.clone(), v.boundary.direction.clone())).collect();
    if let Some(store) = &app.store {
        let mut store = store.lock().expect("store lock");
        for b in boundaries.values() {
            store.save(b)?;
        }
    }
    let boundaries = Arc::new(boundaries);
    *app.boundaries.write().expect("boundary lock") = boundaries.clone();
    *app.dataset.lock().expect("dataset lock") = Some(Arc::new(ds));
    // The session continues from its current code under the new boundaries.
    if let Some(s) = app.session.lock().expect("session lock").as_mut() {
        *s = SessionState::new(app.generator.clone(), boundaries, s.seed(), s.current().clone());
    }

    let summaries = bs
        .boundaries
        .iter()
        .map(|(name, f)| FitSummary {
            name: name.clone(),
            train_accuracy: f.boundary.train_accuracy,
            val_accuracy: f.boundary.val_accuracy,
            all_accuracy: f.all_accuracy,
        })
        .collect();
    Ok(Json17(FitResponse { samples, candidates, seed: req.seed, space: bs.space, boundaries: summaries }))
}

async fn correlations(State(app): State<Arc<AppState>>) -> ApiResult<CorrelationReport> {
    let bs = app.boundaries();
    let attributes: Vec<String> = app.generator.attributes().iter().filter(|a| bs.contains_key(*a)).cloned().collect();
    let boundary_cosine = attributes
        .iter()
        .map(|a| attributes.iter().map(|b| geometry::cosine(&bs[a], &bs[b])).collect::<Result<Vec<_>, _>>())
        .collect::<Result<Vec<_>, _>>()?;

    let cached = app.dataset.lock().expect("dataset lock").clone();
    let ds = match cached {
        Some(ds) => ds,
        None => {
            let ds = Arc::new(pipeline::synthesize_dataset(&app.generator, app.fit_cap, 0)?);
            *app.dataset.lock().expect("dataset lock") = Some(ds.clone());
            ds
        }
    };
    let full = pipeline::score_correlation(&ds)?;
    let index: Vec<usize> = attributes.iter().map(|a| app.generator.attribute_index(a)).collect::<Result<_, _>>()?;
    let score_pearson = index.iter().map(|&i| index.iter().map(|&j| full[i][j]).collect()).collect();
    Ok(Json17(CorrelationReport { attributes, boundary_cosine, score_pearson }))
}

async fn render_current(State(app): State<Arc<AppState>>) -> Result<Response, ApiError> {
    let guard = app.session.lock().expect("session lock");
    let s = guard.as_ref().ok_or_else(ApiError::no_session)?;
    let svg = oracle::render(&app.generator.face_params(s.current())?);
    Ok(([(header::CONTENT_TYPE, "image/svg+xml")], svg).into_response())
}

/// Planted directions of `gen`, quality included.
pub fn ground_truth_boundaries(gen: &GeneratorSpec) -> Result<Boundaries, OracleError> {
    gen.attributes()
        .iter()
        .map(String::as_str)
        .chain([oracle::QUALITY])
        .map(|name| Ok((name.to_string(), gen.ground_truth(name)?)))
        .collect()
}

