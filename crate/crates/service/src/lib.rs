//! JSON-over-HTTP front end for conditioned generation and scoring.
//!
//! Endpoints: `GET /health`, `GET /schema`, `POST /generate`, `POST /score`.
//! The endpoint description lives in `openapi.json` next to this crate's
//! manifest.

use std::net::SocketAddr;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::State;
use axum::http::{header, Method, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;
use tokio::sync::{OwnedSemaphorePermit, Semaphore};
use tower_http::cors::{AllowOrigin, CorsLayer};

use laydiff_core::checkpoint::ModelCheckpoint;
use laydiff_core::layout::{LayoutRecord, SlotCondition};
use laydiff_core::metrics::{alignment, docsim, overlap, piou, PIOU_RASTER};
use laydiff_core::sampler::{sample_component_count, Sampler};
use laydiff_core::schedule::DiffusionSchedule;
use laydiff_core::{ConditionSpec, DatasetSchema, Layout};

pub const OPENAPI: &str = include_str!("../openapi.json");
pub const MAX_SAMPLES: usize = 16;

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    /// Concurrent generations; further requests get 429.
    pub workers: usize,
    /// Allowed CORS origins; empty means any origin.
    pub cors_origins: Vec<String>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            workers: 2,
            cors_origins: Vec::new(),
        }
    }
}

pub struct AppState {
    ckpt: ModelCheckpoint,
    schedule: DiffusionSchedule,
    permits: Arc<Semaphore>,
}

impl AppState {
    /// Fails when the checkpoint is internally inconsistent.
    pub fn new(ckpt: ModelCheckpoint, workers: usize) -> laydiff_core::Result<Self> {
        ckpt.validate()?;
        let schedule = ckpt.schedule.build()?;
        Ok(Self {
            ckpt,
            schedule,
            permits: Arc::new(Semaphore::new(workers.max(1))),
        })
    }

    pub fn schema(&self) -> &DatasetSchema {
        &self.ckpt.schema
    }

    /// Hold a worker slot outside request handling, e.g. during a reload.
    pub fn try_reserve(&self) -> Option<OwnedSemaphorePermit> {
        self.permits.clone().try_acquire_owned().ok()
    }
}

#[derive(Debug, Serialize, PartialEq)]
pub struct FieldError {
    pub field: String,
    pub message: String,
}

fn field(field: impl Into<String>, message: impl Into<String>) -> FieldError {
    FieldError {
        field: field.into(),
        message: message.into(),
    }
}

enum ApiError {
    Invalid(Vec<FieldError>),
    Busy,
    Internal(String),
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        match self {
            ApiError::Invalid(fields) => {
                (StatusCode::BAD_REQUEST, Json(json!({"error": "invalid request", "fields": fields}))).into_response()
            }
            ApiError::Busy => {
                (StatusCode::TOO_MANY_REQUESTS, Json(json!({"error": "all workers busy, retry later"}))).into_response()
            }
            ApiError::Internal(m) => (StatusCode::INTERNAL_SERVER_ERROR, Json(json!({"error": m}))).into_response(),
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PinRequest {
    pub index: usize,
    #[serde(default)]
    pub class: Option<String>,
    /// `[cx, cy, w, h]` canvas fractions.
    #[serde(default, rename = "box")]
    pub bbox: Option<[f64; 4]>,
    /// Pin only `(w, h)` of `box`.
    #[serde(default)]
    pub size_only: bool,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerateRequest {
    #[serde(default)]
    pub n_components: Option<usize>,
    #[serde(default)]
    pub condition: Vec<PinRequest>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub num_samples: Option<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct GenerateResponse {
    pub seed: u64,
    pub layouts: Vec<LayoutRecord>,
}

fn parse_body<T: for<'de> Deserialize<'de>>(body: &Bytes) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::Invalid(vec![field("body", e.to_string())]))
}

/// Turn a request into one condition per sample, or field errors.
pub fn build_conditions(
    req: &GenerateRequest,
    schema: &DatasetSchema,
    histogram: &[u64],
    rng: &mut ChaCha8Rng,
) -> Result<Vec<ConditionSpec>, Vec<FieldError>> {
    let mut errors = Vec::new();
    let num = req.num_samples.unwrap_or(1);
    if num == 0 || num > MAX_SAMPLES {
        errors.push(field("num_samples", format!("must be between 1 and {MAX_SAMPLES}")));
    }
    if let Some(n) = req.n_components {
        if n == 0 || n > schema.n_max {
            errors.push(field("n_components", format!("must be between 1 and {}", schema.n_max)));
        }
    } else if !req.condition.is_empty() {
        errors.push(field("n_components", "required when pins are given"));
    }
    let n = req.n_components.unwrap_or(0);
    let mut slots = vec![SlotCondition::default(); n];
    let mut seen = vec![false; n];
    for (i, pin) in req.condition.iter().enumerate() {
        let at = |f: &str| format!("condition[{i}].{f}");
        if pin.index >= n {
            errors.push(field(at("index"), format!("index {} outside 0..{n}", pin.index)));
            continue;
        }
        if std::mem::replace(&mut seen[pin.index], true) {
            errors.push(field(at("index"), format!("slot {} pinned twice", pin.index)));
            continue;
        }
        let slot = &mut slots[pin.index];
        if let Some(name) = &pin.class {
            match schema.class_index(name) {
                Ok(c) => slot.class = Some(c),
                Err(_) => errors.push(field(at("class"), format!("unknown class {name:?}"))),
            }
        }
        match pin.bbox {
            Some([cx, cy, w, h]) => {
                let unit = |v: f64| (0.0..=1.0).contains(&v);
                if !(w > 0.0 && w <= 1.0 && h > 0.0 && h <= 1.0) {
                    errors.push(field(at("box"), "width and height must lie in (0, 1]"));
                } else if !pin.size_only && !(unit(cx) && unit(cy)) {
                    errors.push(field(at("box"), "center must lie in [0, 1]"));
                } else {
                    slot.size = Some([w, h]);
                    if !pin.size_only {
                        slot.position = Some([cx, cy]);
                    }
                }
            }
            None if pin.size_only => errors.push(field(at("size_only"), "requires box")),
            None => {}
        }
    }
    if !errors.is_empty() {
        return Err(errors);
    }
    (0..num)
        .map(|_| {
            if req.n_components.is_some() {
                return Ok(ConditionSpec {
                    n_components: n,
                    slots: slots.clone(),
                });
            }
            sample_component_count(histogram, rng)
                .map(ConditionSpec::unconditioned)
                .map_err(|e| vec![field("n_components", e.to_string())])
        })
        .collect()
}

async fn health(State(state): State<Arc<AppState>>) -> Json<serde_json::Value> {
    Json(json!({"status": "ok", "schema": state.schema(), "steps": state.schedule.steps}))
}

async fn schema(State(state): State<Arc<AppState>>) -> Json<serde_json::Value> {
    let s = state.schema();
    Json(json!({"name": s.name, "classes": s.classes, "n_max": s.n_max, "canvas": s.canvas}))
}

async fn generate(State(state): State<Arc<AppState>>, body: Bytes) -> Result<Json<GenerateResponse>, ApiError> {
    let req: GenerateRequest = parse_body(&body)?;
    let seed = req.seed.unwrap_or_else(rand::random);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let conds = build_conditions(&req, state.schema(), &state.ckpt.count_histogram, &mut rng).map_err(ApiError::Invalid)?;
    let seeds: Vec<u64> = conds.iter().map(|_| rng.random()).collect();
    let permit = state.permits.clone().try_acquire_owned().map_err(|_| ApiError::Busy)?;
    let worker = state.clone();
    let layouts = tokio::task::spawn_blocking(move || {
        let _permit = permit;
        let sampler = Sampler::new(&worker.ckpt.denoiser, &worker.schedule, &worker.ckpt.schema);
        sampler.generate_batch(&conds, &seeds)
    })
    .await
    .map_err(|e| ApiError::Internal(e.to_string()))?
    .map_err(|e| ApiError::Internal(e.to_string()))?;
    let layouts = layouts
        .iter()
        .map(|l| LayoutRecord::from_layout(l, state.schema()))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| ApiError::Internal(e.to_string()))?;
    Ok(Json(GenerateResponse { seed, layouts }))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoreRequest {
    pub layouts: Vec<LayoutRecord>,
    #[serde(default)]
    pub reference: Option<LayoutRecord>,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct LayoutScore {
    pub overlap: f64,
    pub piou: f64,
    pub alignment: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub docsim: Option<f64>,
}

async fn score(State(state): State<Arc<AppState>>, body: Bytes) -> Result<Json<serde_json::Value>, ApiError> {
    let req: ScoreRequest = parse_body(&body)?;
    let schema = state.schema();
    let mut errors = Vec::new();
    if req.layouts.is_empty() {
        errors.push(field("layouts", "must not be empty"));
    }
    let mut layouts: Vec<Layout> = Vec::new();
    for (i, r) in req.layouts.iter().enumerate() {
        match r.to_layout(schema) {
            Ok(l) => layouts.push(l),
            Err(e) => errors.push(field(format!("layouts[{i}]"), e.to_string())),
        }
    }
    let reference = match &req.reference {
        Some(r) => match r.to_layout(schema) {
            Ok(l) => Some(l),
            Err(e) => {
                errors.push(field("reference", e.to_string()));
                None
            }
        },
        None => None,
    };
    if !errors.is_empty() {
        return Err(ApiError::Invalid(errors));
    }
    let scores: Vec<LayoutScore> = layouts
        .iter()
        .map(|l| LayoutScore {
            overlap: overlap(l),
            piou: piou(l, PIOU_RASTER),
            alignment: alignment(l),
            docsim: reference.as_ref().map(|r| docsim(l, r)),
        })
        .collect();
    Ok(Json(json!({ "scores": scores })))
}

fn cors(origins: &[String]) -> CorsLayer {
    let allow = if origins.is_empty() {
        AllowOrigin::any()
    } else {
        AllowOrigin::list(origins.iter().filter_map(|o| o.parse().ok()))
    };
    CorsLayer::new()
        .allow_origin(allow)
        .allow_methods([Method::GET, Method::POST])
        .allow_headers([header::CONTENT_TYPE])
}

pub fn router(state: Arc<AppState>, cfg: &ServiceConfig) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/schema", get(schema))
        .route("/generate", post(generate))
        .route("/score", post(score))
        .layer(cors(&cfg.cors_origins))
        .with_state(state)
}

/// Serve until Ctrl-C.
pub async fn serve(ckpt: ModelCheckpoint, addr: SocketAddr, cfg: ServiceConfig) -> Result<(), Box<dyn std::error::Error + Send + Sync>> {
    let state = Arc::new(AppState::new(ckpt, cfg.workers)?);
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state, &cfg))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
