//! HTTP facade over a loaded model bundle.
//!
//! One immutable [`Snapshot`] serves every request. Reloading builds a new
//! snapshot and swaps it in whole, so a request sees either the old or the new
//! model, never a mix.

use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};
use std::time::Instant;

use axum::body::Bytes;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::Router;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use opiaid_core::cadr::{cadr_curve, CadrCurve, DoseSupport, FitWarning};
use opiaid_core::diagnostics::OverlapReport;
use opiaid_core::domain::{CaseFeatures, DoseGrid, Treatment, TreatmentRegistry, UtilityWeights};
use opiaid_core::io::{read_bytes, sha256_hex, ModelBundle};
use opiaid_core::recommendation::{recommend_from_curve, Recommendation};
use opiaid_core::Error;

/// A loaded model: the bundle, the grid it is swept over and the hash of the
/// artifact bytes it came from.
#[derive(Debug, Clone)]
pub struct Snapshot {
    pub bundle: ModelBundle,
    pub version_hash: String,
    pub source: Option<PathBuf>,
}

impl Snapshot {
    /// Decodes an artifact; `grid` replaces the bundle's own dose grid.
    pub fn from_bytes(bytes: &[u8], grid: Option<DoseGrid>) -> opiaid_core::Result<Self> {
        let mut bundle = ModelBundle::from_bytes(bytes)?;
        if let Some(g) = grid {
            bundle.cadr.dose_grid = g;
        }
        Ok(Snapshot {
            bundle,
            version_hash: sha256_hex(bytes),
            source: None,
        })
    }

    pub fn load(path: &Path, grid: Option<DoseGrid>) -> opiaid_core::Result<Self> {
        let mut s = Snapshot::from_bytes(&read_bytes(path)?, grid)?;
        s.source = Some(path.to_path_buf());
        Ok(s)
    }
}

#[derive(Debug, Clone, Default)]
pub struct ServiceConfig {
    /// Artifact loaded at startup and by a reload without an explicit path.
    pub model_artifact: Option<PathBuf>,
    pub grid: Option<DoseGrid>,
    pub default_weights: UtilityWeights,
}

pub struct AppState {
    config: ServiceConfig,
    snapshot: RwLock<Option<Arc<Snapshot>>>,
    started: Instant,
}

impl AppState {
    /// State with the configured artifact loaded, if any.
    pub fn new(config: ServiceConfig) -> opiaid_core::Result<Self> {
        config.default_weights.validate()?;
        let snapshot = match &config.model_artifact {
            Some(p) => Some(Arc::new(Snapshot::load(p, config.grid)?)),
            None => None,
        };
        Ok(AppState {
            config,
            snapshot: RwLock::new(snapshot),
            started: Instant::now(),
        })
    }

    pub fn snapshot(&self) -> Option<Arc<Snapshot>> {
        self.snapshot.read().unwrap_or_else(|e| e.into_inner()).clone()
    }

    pub fn install(&self, s: Snapshot) {
        *self.snapshot.write().unwrap_or_else(|e| e.into_inner()) = Some(Arc::new(s));
    }

    fn current(&self) -> Result<Arc<Snapshot>, ApiError> {
        self.snapshot().ok_or_else(|| ApiError {
            status: StatusCode::CONFLICT,
            error: "no model loaded".into(),
            field: None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApiError {
    #[serde(skip)]
    pub status: StatusCode,
    pub error: String,
    /// Dotted path of the offending request field.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub field: Option<String>,
}

impl ApiError {
    fn bad_request(error: impl Into<String>, field: Option<String>) -> Self {
        ApiError {
            status: StatusCode::BAD_REQUEST,
            error: error.into(),
            field,
        }
    }

    /// Maps a domain validation failure onto the request field it concerns.
    fn from_domain(e: Error) -> Self {
        match &e {
            Error::InvalidField { field, .. } => {
                let path = match *field {
                    "w_pain" | "w_orades" => format!("weights.{field}"),
                    "weights" | "treatment" => field.to_string(),
                    other => format!("case.{other}"),
                };
                ApiError::bad_request(e.to_string(), Some(path))
            }
            _ => ApiError::bad_request(e.to_string(), None),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, json_body(&self)).into_response()
    }
}

fn json_body<T: Serialize>(v: &T) -> Response {
    match serde_json::to_vec(v) {
        Ok(bytes) => ([(axum::http::header::CONTENT_TYPE, "application/json")], bytes).into_response(),
        Err(e) => (StatusCode::INTERNAL_SERVER_ERROR, e.to_string()).into_response(),
    }
}

/// Parses a JSON body, reporting the path of the first offending field.
fn parse_body<T: DeserializeOwned>(bytes: &[u8]) -> Result<T, ApiError> {
    let mut de = serde_json::Deserializer::from_slice(bytes);
    serde_path_to_error::deserialize(&mut de).map_err(|e| {
        let path = e.path().to_string();
        let field = (path != ".").then_some(path);
        ApiError::bad_request(e.into_inner().to_string(), field)
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaseRequest {
    pub case: CaseFeatures,
    /// Defaults to the service's configured weights.
    #[serde(default)]
    pub weights: Option<UtilityWeights>,
    #[serde(default)]
    pub treatment: Option<Treatment>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecommendResponse {
    #[serde(flatten)]
    pub recommendation: Recommendation,
    pub treatment: Treatment,
    pub version_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveResponse {
    #[serde(flatten)]
    pub curve: CadrCurve,
    pub weights: UtilityWeights,
    pub treatment: Treatment,
    pub version_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridInfo {
    pub min_meq: f64,
    pub max_meq: f64,
    pub step_meq: f64,
    pub n_points: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelInfo {
    pub id: String,
    pub version_hash: String,
    pub artifact_version: u64,
    pub pain_learner: String,
    pub orade_learner: String,
    pub grid: GridInfo,
    pub registry: TreatmentRegistry,
    pub n_surgery_types: u32,
    pub dose_support: DoseSupport,
    pub fit_warnings: Vec<FitWarning>,
    pub default_weights: UtilityWeights,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsResponse {
    pub version_hash: String,
    pub overlap: Option<OverlapReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub uptime_seconds: f64,
    pub model_loaded: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReloadRequest {
    /// Defaults to the configured artifact.
    #[serde(default)]
    pub path: Option<PathBuf>,
}

/// Validated inputs and the curve they produce on `s`.
fn evaluate(state: &AppState, s: &Snapshot, body: &[u8]) -> Result<(CaseRequest, UtilityWeights, CadrCurve), ApiError> {
    let req: CaseRequest = parse_body(body)?;
    let w = req.weights.unwrap_or(state.config.default_weights);
    w.validate().map_err(ApiError::from_domain)?;
    let t = req.treatment.unwrap_or_default();
    let curve = cadr_curve(&s.bundle.cadr, &req.case, t, w).map_err(ApiError::from_domain)?;
    Ok((req, w, curve))
}

async fn recommend(State(state): State<Arc<AppState>>, body: Bytes) -> Result<Response, ApiError> {
    let s = state.current()?;
    let (req, w, curve) = evaluate(&state, &s, &body)?;
    let recommendation = recommend_from_curve(&s.bundle.cadr, &curve, &req.case, w, &s.bundle.diagnostics);
    Ok(json_body(&RecommendResponse {
        recommendation,
        treatment: req.treatment.unwrap_or_default(),
        version_hash: s.version_hash.clone(),
    }))
}

async fn curve(State(state): State<Arc<AppState>>, body: Bytes) -> Result<Response, ApiError> {
    let s = state.current()?;
    let (req, weights, curve) = evaluate(&state, &s, &body)?;
    Ok(json_body(&CurveResponse {
        curve,
        weights,
        treatment: req.treatment.unwrap_or_default(),
        version_hash: s.version_hash.clone(),
    }))
}

fn model_info(state: &AppState, s: &Snapshot) -> ModelInfo {
    let m = &s.bundle.cadr;
    let g = m.dose_grid;
    let (pk, ok) = (m.pain_model.kind(), m.orade_model.kind());
    ModelInfo {
        id: s.bundle.id.clone(),
        version_hash: s.version_hash.clone(),
        artifact_version: s.bundle.version,
        pain_learner: format!("{}/{}", pk.family, pk.task),
        orade_learner: format!("{}/{}", ok.family, ok.task),
        grid: GridInfo {
            min_meq: g.min(),
            max_meq: g.max(),
            step_meq: g.step(),
            n_points: g.len(),
        },
        registry: m.registry.clone(),
        n_surgery_types: m.n_surgery_types,
        dose_support: m.dose_support,
        fit_warnings: m.warnings.clone(),
        default_weights: state.config.default_weights,
    }
}

async fn model(State(state): State<Arc<AppState>>) -> Result<Response, ApiError> {
    let s = state.current()?;
    Ok(json_body(&model_info(&state, &s)))
}

async fn diagnostics(State(state): State<Arc<AppState>>) -> Result<Response, ApiError> {
    let s = state.current()?;
    Ok(json_body(&DiagnosticsResponse {
        version_hash: s.version_hash.clone(),
        overlap: s.bundle.diagnostics.overlap.clone(),
    }))
}

async fn health(State(state): State<Arc<AppState>>) -> Response {
    json_body(&Health {
        status: "ok".into(),
        uptime_seconds: state.started.elapsed().as_secs_f64(),
        model_loaded: state.snapshot().is_some(),
    })
}

async fn reload(State(state): State<Arc<AppState>>, body: Bytes) -> Result<Response, ApiError> {
    let req: ReloadRequest = if body.is_empty() {
        ReloadRequest::default()
    } else {
        parse_body(&body)?
    };
    let path = req
        .path
        .or_else(|| state.config.model_artifact.clone())
        .ok_or_else(|| ApiError::bad_request("no artifact path given or configured", Some("path".into())))?;
    let s = Snapshot::load(&path, state.config.grid).map_err(|e| ApiError::bad_request(e.to_string(), None))?;
    let info = model_info(&state, &s);
    state.install(s);
    Ok(json_body(&info))
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/v1/recommend", post(recommend))
        .route("/v1/curve", post(curve))
        .route("/v1/model", get(model))
        .route("/v1/diagnostics", get(diagnostics))
        .route("/v1/health", get(health))
        .route("/v1/admin/reload", post(reload))
        .with_state(state)
}
