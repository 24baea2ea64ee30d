//! The `hypersem` command line.
//!
//! Every subcommand takes `--seed` and writes its result to `--out`. Exit
//! codes: 0 on success, 1 when an input or check is invalid, 2 on I/O
//! failure.

use std::ffi::OsString;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use hypersem_core::geometry::{self, LatentCode, SemanticDirection, Space};
use hypersem_core::lsds::{self, LsdsError};
use hypersem_core::oracle::{self, FaceParams, GeneratorConfig, GeneratorSpec, OracleError};
use hypersem_core::pipeline::montecarlo::{self, MonteCarloReport};
use hypersem_core::pipeline::{self, PipelineError, SampleDataset, DEFAULT_CANDIDATES, DEFAULT_SAMPLES};
use hypersem_core::{rng, SvmConfig};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::api::{self, AppState, BoundaryDoc, ResolvedDirection};
use crate::json;
use crate::session::{self, Boundaries, ManipulationRequest, SessionError};
use crate::store::{self, BoundaryStore, StoreError};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Invalid(String),
    #[error("{0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Invalid(_) => 1,
            CliError::Io(_) => 2,
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

fn invalid(e: impl ToString) -> CliError {
    CliError::Invalid(e.to_string())
}

fn io_error(path: &Path, e: io::Error) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

impl From<StoreError> for CliError {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::IoFailure { .. } => CliError::Io(e.to_string()),
            _ => invalid(e),
        }
    }
}

impl From<LsdsError> for CliError {
    fn from(e: LsdsError) -> Self {
        match e {
            LsdsError::Io(_) => CliError::Io(e.to_string()),
            _ => invalid(e),
        }
    }
}

impl From<OracleError> for CliError {
    fn from(e: OracleError) -> Self {
        invalid(e)
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        invalid(e)
    }
}

impl From<SessionError> for CliError {
    fn from(e: SessionError) -> Self {
        invalid(e)
    }
}

impl From<geometry::GeometryError> for CliError {
    fn from(e: geometry::GeometryError) -> Self {
        invalid(e)
    }
}

#[derive(Debug, Parser)]
#[command(name = "hypersem", version, about = "Find, inspect and edit along semantic boundaries of a synthetic latent generator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a generator configuration.
    GenConfig(GenConfigArgs),
    /// Synthesize a scored sample dataset (LSDS file).
    Sample(SampleArgs),
    /// Fit boundaries on a dataset.
    Fit(FitArgs),
    /// Boundary cosines and score correlations.
    Correlate(CorrelateArgs),
    /// Edit a latent code along a (conditioned) boundary.
    Edit(EditArgs),
    /// Render a latent code as SVG.
    Render(RenderArgs),
    /// Recover a latent code from face parameters.
    Invert(InvertArgs),
    /// Run a Monte Carlo concentration check.
    Verify(VerifyArgs),
    /// Serve the HTTP API.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct Common {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct GeneratorArg {
    /// Generator configuration written by `gen-config`; defaults otherwise.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SpaceArg {
    Z,
    W,
}

impl From<SpaceArg> for Space {
    fn from(s: SpaceArg) -> Self {
        match s {
            SpaceArg::Z => Space::Z,
            SpaceArg::W => Space::W,
        }
    }
}

#[derive(Debug, Args)]
pub struct GenConfigArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, default_value_t = 512)]
    pub dim: usize,
    #[arg(long, default_value_t = 0.1)]
    pub noise: f64,
    /// Space in which the scores are linear.
    #[arg(long, value_enum, default_value_t = SpaceArg::Z)]
    pub space: SpaceArg,
    /// Mutually orthogonal attribute directions instead of the default
    /// correlated ones.
    #[arg(long)]
    pub orthogonal: bool,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub generator: GeneratorArg,
    #[arg(long, default_value_t = DEFAULT_SAMPLES)]
    pub count: usize,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub generator: GeneratorArg,
    /// LSDS dataset; synthesized from `--seed` when omitted.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Fit only this attribute and write a single boundary file to `--out`.
    /// Without it `--out` is a directory receiving every boundary.
    #[arg(long)]
    pub attr: Option<String>,
    #[arg(long, default_value_t = DEFAULT_CANDIDATES)]
    pub candidates: usize,
    /// Space to fit in; the generator's own space by default.
    #[arg(long, value_enum)]
    pub space: Option<SpaceArg>,
    /// Also write per-boundary accuracies here.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CorrelateArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub generator: GeneratorArg,
    #[arg(long)]
    pub data: PathBuf,
    /// Boundary store directory.
    #[arg(long)]
    pub boundaries: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct LatentArg {
    /// Latent code file (`{"values": [...], "space": "Z"}`); a Gaussian
    /// code drawn from `--seed` when omitted.
    #[arg(long)]
    pub latent: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EditArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub generator: GeneratorArg,
    #[command(flatten)]
    pub latent: LatentArg,
    /// Boundary store directory; `$HYPERSEM_HOME/boundaries` by default.
    #[arg(long, conflicts_with = "ground_truth")]
    pub boundaries: Option<PathBuf>,
    /// Use the generator's planted directions.
    #[arg(long)]
    pub ground_truth: bool,
    #[arg(long)]
    pub attr: String,
    #[arg(long, allow_hyphen_values = true)]
    pub alpha: f64,
    /// Boundary to hold fixed; repeatable.
    #[arg(long = "condition")]
    pub conditions: Vec<String>,
}

#[derive(Debug, Args)]
pub struct RenderArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub generator: GeneratorArg,
    #[command(flatten)]
    pub latent: LatentArg,
}

#[derive(Debug, Args)]
pub struct InvertArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub generator: GeneratorArg,
    /// Face parameters to match (JSON).
    #[arg(long)]
    pub target: PathBuf,
}

#[derive(Debug, Args)]
#[group(id = "check", required = true, multiple = false, args = ["property2", "sphere", "annulus", "tail"])]
pub struct VerifyArgs {
    #[command(flatten)]
    pub common: Common,
    /// Hyperplane slab mass of a Gaussian code.
    #[arg(long)]
    pub property2: bool,
    /// Equatorial slab mass on the unit sphere.
    #[arg(long)]
    pub sphere: bool,
    /// Gaussian annulus mass.
    #[arg(long)]
    pub annulus: bool,
    /// Tail mass beyond `--threshold`, required below `--limit`.
    #[arg(long)]
    pub tail: bool,
    #[arg(long, default_value_t = 512)]
    pub d: usize,
    #[arg(long, default_value_t = 2.0)]
    pub alpha: f64,
    #[arg(long, default_value_t = 5.0)]
    pub beta: f64,
    #[arg(long, default_value_t = 5.0)]
    pub threshold: f64,
    #[arg(long, default_value_t = 1e-6)]
    pub limit: f64,
    #[arg(long, default_value_t = 1_000_000)]
    pub trials: u64,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// Receives `{"address": ...}` once the server is listening.
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub generator: GeneratorArg,
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub addr: String,
    /// Boundary store directory; `$HYPERSEM_HOME/boundaries` by default.
    #[arg(long)]
    pub store: Option<PathBuf>,
    /// Serve the planted directions instead of fitted ones.
    #[arg(long)]
    pub ground_truth: bool,
    #[arg(long, default_value_t = api::DEFAULT_FIT_CAP)]
    pub fit_cap: usize,
}

/// Parses `args` (program name first) and runs the command.
pub fn run<I, T>(args: I) -> Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = Cli::try_parse_from(args).map_err(|e| match e.kind() {
        clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => {
            let _ = e.print();
            CliError::Invalid(String::new())
        }
        _ => invalid(e.render()),
    })?;
    match cli.command {
        Command::GenConfig(a) => gen_config(a),
        Command::Sample(a) => sample(a),
        Command::Fit(a) => fit(a),
        Command::Correlate(a) => correlate(a),
        Command::Edit(a) => edit(a),
        Command::Render(a) => render(a),
        Command::Invert(a) => invert(a),
        Command::Verify(a) => verify(a),
        Command::Serve(a) => serve(a),
    }
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| io_error(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| io_error(parent, e))?;
    }
    store::write_atomic(path, text).map_err(|e| io_error(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    json::from_str(&read_text(path)?)
        .map_err(|(offset, msg)| invalid(format!("{} is malformed at byte {offset}: {msg}", path.display())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_text(path, &json::to_string_pretty(value))
}

fn load_generator(arg: &GeneratorArg) -> Result<GeneratorSpec> {
    let config = match &arg.config {
        Some(path) => read_json(path)?,
        None => GeneratorConfig::default(),
    };
    Ok(oracle::make_generator(config)?)
}

#[derive(Deserialize)]
struct LatentFile {
    values: Vec<f64>,
    space: Space,
}

/// The code from `--latent`, or a Gaussian code from `seed`.
fn load_latent(arg: &LatentArg, gen: &GeneratorSpec, seed: u64) -> Result<LatentCode> {
    let code = match &arg.latent {
        Some(path) => {
            let f: LatentFile = read_json(path)?;
            LatentCode::new(f.values, f.space)?
        }
        None => LatentCode::new(rng::normal_vec(&mut rng::seeded(seed), gen.dim()), Space::Z)?,
    };
    if code.dim() != gen.dim() {
        return Err(invalid(format!("latent code has {} entries, the generator expects {}", code.dim(), gen.dim())));
    }
    Ok(code)
}

fn gen_config(a: GenConfigArgs) -> Result<()> {
    let base = if a.orthogonal { GeneratorConfig::orthogonal() } else { GeneratorConfig::default() };
    let config = base.with_dim(a.dim).with_noise(a.noise).with_seed(a.common.seed).with_space(a.space.into());
    oracle::make_generator(config.clone())?;
    write_json(&a.common.out, &config)
}

fn sample(a: SampleArgs) -> Result<()> {
    let gen = load_generator(&a.generator)?;
    let ds = pipeline::synthesize_dataset(&gen, a.count, a.common.seed)?;
    lsds::write(&a.common.out, &ds)?;
    println!("{} samples, d = {}, written to {}", ds.count(), ds.dim(), a.common.out.display());
    Ok(())
}

fn load_dataset(path: &Option<PathBuf>, gen: &GeneratorSpec, seed: u64) -> Result<SampleDataset> {
    let ds = match path {
        Some(p) => lsds::read(p)?,
        None => pipeline::synthesize_dataset(gen, DEFAULT_SAMPLES, seed)?,
    };
    if ds.dim() != gen.dim() || ds.attribute_count() != gen.attributes().len() {
        return Err(invalid("dataset does not match the generator"));
    }
    Ok(ds)
}

#[derive(Serialize)]
struct FitEntry {
    name: String,
    train_accuracy: f64,
    val_accuracy: f64,
    all_accuracy: f64,
}

fn fit(a: FitArgs) -> Result<()> {
    let gen = load_generator(&a.generator)?;
    if let Some(attr) = &a.attr {
        if attr != oracle::QUALITY && !gen.attributes().contains(attr) {
            return Err(invalid(format!("unknown attribute {attr:?}")));
        }
    }
    let mut ds = load_dataset(&a.data, &gen, a.common.seed)?;
    let space = a.space.map(Space::from).unwrap_or(gen.space());
    if space == Space::W && ds.space() == Space::Z {
        ds = pipeline::to_w_space(&gen, &ds)?;
    }
    let bs = pipeline::fit_all_boundaries(&ds, &gen, a.candidates, &SvmConfig::default().with_seed(a.common.seed))?;
    let entries: Vec<FitEntry> = bs
        .boundaries
        .iter()
        .map(|(name, f)| FitEntry {
            name: name.clone(),
            train_accuracy: f.boundary.train_accuracy,
            val_accuracy: f.boundary.val_accuracy,
            all_accuracy: f.all_accuracy,
        })
        .collect();
    match &a.attr {
        Some(attr) => {
            let b = &bs.boundaries[attr].boundary.direction;
            write_text(&a.common.out, &store::encode(b))?;
        }
        None => {
            let mut st = BoundaryStore::open(&a.common.out)?;
            for f in bs.boundaries.values() {
                st.save(&f.boundary.direction)?;
            }
        }
    }
    if let Some(path) = &a.report {
        write_json(path, &entries)?;
    }
    for e in entries.iter().filter(|e| a.attr.as_ref().is_none_or(|x| *x == e.name)) {
        println!("{:<10} val {:.4}  all {:.4}", e.name, e.val_accuracy, e.all_accuracy);
    }
    Ok(())
}

fn open_boundaries(dir: &Option<PathBuf>) -> Result<Boundaries> {
    let mut st = match dir {
        Some(d) => BoundaryStore::open(d)?,
        None => BoundaryStore::open_default()?,
    };
    st.load_all()?;
    if st.loaded().is_empty() {
        return Err(invalid(format!("no boundaries in {}", st.dir().display())));
    }
    Ok(st.loaded().clone())
}

fn correlate(a: CorrelateArgs) -> Result<()> {
    let gen = load_generator(&a.generator)?;
    let ds = load_dataset(&Some(a.data.clone()), &gen, a.common.seed)?;
    let bs = match &a.boundaries {
        Some(_) => open_boundaries(&a.boundaries)?,
        None => pipeline::fit_all_boundaries(&ds, &gen, DEFAULT_CANDIDATES.min(ds.count() / 2), &SvmConfig::default().with_seed(a.common.seed))?
            .boundaries
            .into_iter()
            .map(|(k, v)| (k, v.boundary.direction))
            .collect(),
    };
    let attrs: Vec<String> = gen.attributes().iter().filter(|n| bs.contains_key(*n)).cloned().collect();
    let boundary_cosine = attrs
        .iter()
        .map(|x| attrs.iter().map(|y| geometry::cosine(&bs[x], &bs[y])).collect::<std::result::Result<Vec<_>, _>>())
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let full = pipeline::score_correlation(&ds)?;
    let idx: Vec<usize> = attrs.iter().map(|n| gen.attribute_index(n)).collect::<std::result::Result<_, _>>()?;
    let score_pearson: Vec<Vec<f64>> = idx.iter().map(|&i| idx.iter().map(|&j| full[i][j]).collect()).collect();
    let report = pipeline::CorrelationReport { attributes: attrs, boundary_cosine, score_pearson };
    write_json(&a.common.out, &report)
}

#[derive(Serialize)]
struct EditOutput {
    latent: LatentCode,
    scores: Vec<f64>,
    face: FaceParams,
    direction: ResolvedDirection,
}

fn edit(a: EditArgs) -> Result<()> {
    let gen = load_generator(&a.generator)?;
    let boundaries = if a.ground_truth { api::ground_truth_boundaries(&gen)? } else { open_boundaries(&a.boundaries)? };
    let req = ManipulationRequest { attribute: a.attr, alpha: a.alpha, conditions: a.conditions };
    // Report unknown names before touching the latent code.
    session::resolve(&boundaries, &req)?;
    let mut code = load_latent(&a.latent, &gen, a.common.seed)?;
    let space = boundaries.values().next().map(SemanticDirection::space).unwrap_or(Space::Z);
    if space == Space::W && code.space() == Space::Z {
        code = oracle::warp(&gen, &code)?;
    }
    let mut s = session::SessionState::new(Arc::new(gen), Arc::new(boundaries), a.common.seed, code);
    let resp = api::api_edit(&mut s, &req).map_err(|e| invalid(format!("{e:?}")))?;
    let out = EditOutput {
        latent: resp.view.latent,
        scores: resp.view.scores,
        face: resp.view.face,
        direction: resp.direction,
    };
    write_json(&a.common.out, &out)
}

fn render(a: RenderArgs) -> Result<()> {
    let gen = load_generator(&a.generator)?;
    let code = load_latent(&a.latent, &gen, a.common.seed)?;
    write_text(&a.common.out, &oracle::render(&gen.face_params(&code)?))
}

#[derive(Serialize)]
struct InvertOutput {
    latent: LatentCode,
    objective: f64,
    steps: usize,
    scores: Vec<f64>,
    face: FaceParams,
}

fn invert(a: InvertArgs) -> Result<()> {
    let gen = load_generator(&a.generator)?;
    let target: FaceParams = read_json(&a.target)?;
    let inv = oracle::invert(&gen, &target, a.common.seed)?;
    let out = InvertOutput {
        scores: gen.semantic_scores(&inv.code)?,
        face: gen.face_params(&inv.code)?,
        latent: inv.code,
        objective: inv.objective,
        steps: inv.steps,
    };
    write_json(&a.common.out, &out)
}

fn verify(a: VerifyArgs) -> Result<()> {
    let seed = a.common.seed;
    let rep: MonteCarloReport = if a.property2 {
        montecarlo::property2_mc(a.d, a.alpha, a.trials, seed)?
    } else if a.sphere {
        montecarlo::sphere_slab_mc(a.d, a.alpha, a.trials, seed)?
    } else if a.annulus {
        montecarlo::annulus_mc(a.d, a.beta, a.trials, seed)?
    } else {
        montecarlo::tail_mc(a.d, a.threshold, a.limit, a.trials, seed)?
    };
    write_json(&a.common.out, &rep)?;
    println!(
        "{:?} d={} parameter={} empirical={:.6} bound={:.6} ±{:.2e} {}",
        rep.check,
        rep.d,
        rep.parameter,
        rep.empirical_probability,
        rep.bound_value,
        rep.half_width,
        if rep.passed { "passed" } else { "FAILED" }
    );
    if rep.passed {
        Ok(())
    } else {
        Err(invalid(format!("{:?} check failed", rep.check)))
    }
}

#[derive(Serialize)]
struct ServeInfo {
    address: String,
    boundaries: Vec<BoundaryDoc>,
}

fn serve(a: ServeArgs) -> Result<()> {
    let gen = load_generator(&a.generator)?;
    let mut st = match &a.store {
        Some(d) => BoundaryStore::open(d)?,
        None => BoundaryStore::open_default()?,
    };
    let boundaries = if a.ground_truth {
        api::ground_truth_boundaries(&gen)?
    } else {
        st.load_all()?;
        let complete = gen.attributes().iter().all(|n| st.get(n).is_some_and(|b| b.dim() == gen.dim()));
        if !complete {
            eprintln!("fitting boundaries on {} samples", a.fit_cap);
            let ds = pipeline::synthesize_dataset(&gen, a.fit_cap, a.common.seed)?;
            let ds = if gen.space() == Space::W { pipeline::to_w_space(&gen, &ds)? } else { ds };
            let k = api::default_candidates(a.fit_cap);
            let bs = pipeline::fit_all_boundaries(&ds, &gen, k, &SvmConfig::default().with_seed(a.common.seed))?;
            for f in bs.boundaries.values() {
                st.save(&f.boundary.direction)?;
            }
        }
        st.loaded().clone()
    };
    let docs = boundaries.values().map(BoundaryDoc::from).collect();
    let state = Arc::new(AppState::new(Arc::new(gen), boundaries, Some(st), a.fit_cap, a.common.seed));

    let rt = tokio::runtime::Runtime::new().map_err(|e| CliError::Io(e.to_string()))?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(&a.addr).await.map_err(|e| CliError::Io(format!("{}: {e}", a.addr)))?;
        let address = listener.local_addr().map_err(|e| CliError::Io(e.to_string()))?.to_string();
        write_json(&a.common.out, &ServeInfo { address: address.clone(), boundaries: docs })?;
        eprintln!("listening on http://{address}");
        api::serve(listener, state).await.map_err(|e| CliError::Io(e.to_string()))
    })
}
