//! HTTP facade over `iss-core`: stateless scoring endpoints, background
//! training jobs and server-side deliberation sessions.

pub mod bodies;
pub mod error;
pub mod session;

use std::collections::HashMap;
use std::net::SocketAddr;
use std::path::{Component, Path, PathBuf};
use std::sync::{Arc, Mutex};

use axum::extract::rejection::JsonRejection;
use axum::extract::{FromRequest, Path as UrlPath, Query, Request, State};
use axum::http::{header, HeaderValue, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use iss_core::corpus::{load_corpus, retrospective_run, RetrospectiveConfig};
use iss_core::{IssError, ModelParams, ThresholdSchedule, TrainingDataset, CONVENTION_NOTE, ENGINE_VERSION};

use bodies::{EngineDefaults, InlineRetrospective, TrainRequest, TrainResult};
use error::ApiError;
use session::{CreateSession, RoundAction, SessionError, SessionStore};

pub const VERSION_HEADER: &str = "x-iss-engine-version";
pub const CONVENTION_HEADER: &str = "x-iss-convention";

/// Every route the service exposes, as `(method, path)`.
pub const ROUTES: &[(&str, &str)] = &[
    ("POST", "/v1/score"),
    ("POST", "/v1/weights/aggregate"),
    ("POST", "/v1/sensitivity"),
    ("POST", "/v1/train"),
    ("GET", "/v1/train/{id}"),
    ("GET", "/v1/thresholds"),
    ("POST", "/v1/retrospective"),
    ("POST", "/v1/sessions"),
    ("GET", "/v1/sessions/{id}"),
    ("POST", "/v1/sessions/{id}/rounds"),
    ("GET", "/v1/health"),
];

#[derive(Debug, Clone, Default)]
pub struct ServiceConfig {
    pub listen: Option<SocketAddr>,
    /// Root for corpus and retrospective-config paths named in requests.
    pub corpus_dir: Option<PathBuf>,
    pub params_path: Option<PathBuf>,
    pub schedule_path: Option<PathBuf>,
    /// Where session event files live; sessions are memory-only without it.
    pub session_dir: Option<PathBuf>,
    pub token: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum JobStatus {
    Running,
    Done { result: Box<TrainResult> },
    Failed { error: error::ErrorDetail },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobView {
    pub id: String,
    #[serde(flatten)]
    pub status: JobStatus,
}

pub struct AppState {
    defaults: EngineDefaults,
    corpus_dir: Option<PathBuf>,
    token: Option<String>,
    jobs: Mutex<HashMap<String, JobStatus>>,
    sessions: SessionStore,
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, IssError> {
    let text = std::fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

impl AppState {
    pub fn from_config(cfg: &ServiceConfig) -> Result<Arc<Self>, IssError> {
        let params: Option<ModelParams> = cfg.params_path.as_deref().map(read_json).transpose()?;
        let schedule: ThresholdSchedule = match cfg.schedule_path.as_deref() {
            Some(p) => read_json(p)?,
            None => ThresholdSchedule::default(),
        };
        let defaults = EngineDefaults { params, schedule };
        Ok(Arc::new(AppState {
            sessions: SessionStore::open(cfg.session_dir.clone(), defaults.clone())?,
            defaults,
            corpus_dir: cfg.corpus_dir.clone(),
            token: cfg.token.clone(),
            jobs: Mutex::new(HashMap::new()),
        }))
    }

    fn corpus_path(&self, rel: &str) -> Result<PathBuf, ApiError> {
        let dir = self
            .corpus_dir
            .as_ref()
            .ok_or_else(|| IssError::validation("corpus", "the service has no corpus directory configured"))?;
        let rel = Path::new(rel);
        if rel.components().any(|c| !matches!(c, Component::Normal(_))) {
            return Err(IssError::validation("corpus", "path must be relative to the corpus directory").into());
        }
        Ok(dir.join(rel))
    }
}

/// JSON body extractor whose rejections use the service error shape.
pub struct ApiJson<T>(pub T);

impl<S: Send + Sync, T: DeserializeOwned> FromRequest<S> for ApiJson<T> {
    type Rejection = ApiError;

    async fn from_request(req: Request, state: &S) -> Result<Self, Self::Rejection> {
        match Json::<T>::from_request(req, state).await {
            Ok(Json(v)) => Ok(ApiJson(v)),
            Err(e) => Err(rejection(e)),
        }
    }
}

fn rejection(e: JsonRejection) -> ApiError {
    let status = match e {
        JsonRejection::MissingJsonContentType(_) => StatusCode::UNSUPPORTED_MEDIA_TYPE,
        _ => StatusCode::BAD_REQUEST,
    };
    ApiError::new(status, "validation", e.body_text())
}

type ApiResult<T> = Result<Json<T>, ApiError>;

async fn score(State(st): State<Arc<AppState>>, ApiJson(req): ApiJson<bodies::ScoreRequest>) -> ApiResult<bodies::ScoreResponse> {
    Ok(Json(bodies::score(&req, &st.defaults)?))
}

async fn aggregate(ApiJson(req): ApiJson<bodies::AggregateRequest>) -> ApiResult<bodies::AggregateResponse> {
    Ok(Json(bodies::aggregate(&req)?))
}

async fn sensitivity(
    State(st): State<Arc<AppState>>,
    ApiJson(req): ApiJson<bodies::SensitivityRequest>,
) -> ApiResult<iss_core::SensitivityReport> {
    Ok(Json(bodies::sensitivity(&req, &st.defaults)?))
}

async fn thresholds(
    State(st): State<Arc<AppState>>,
    Query(q): Query<HashMap<String, String>>,
) -> ApiResult<bodies::ThresholdsResponse> {
    let raw = q.get("t").ok_or_else(|| IssError::validation("t", "query parameter is required"))?;
    let t: f64 = raw
        .parse()
        .map_err(|_| IssError::validation("t", format!("`{raw}` is not a number")))?;
    Ok(Json(bodies::thresholds(t, &st.defaults.schedule)?))
}

async fn retrospective(
    State(st): State<Arc<AppState>>,
    ApiJson(body): ApiJson<serde_json::Value>,
) -> ApiResult<iss_core::corpus::RetrospectiveReport> {
    let report = match body.get("config") {
        Some(rel) => {
            let rel = rel.as_str().ok_or_else(|| IssError::validation("config", "must be a string"))?;
            let cfg = RetrospectiveConfig::load(st.corpus_path(rel)?)?;
            retrospective_run(&cfg)?
        }
        None => {
            let req: InlineRetrospective = serde_json::from_value(body).map_err(IssError::from)?;
            bodies::retrospective_inline(&req, &st.defaults)?
        }
    };
    Ok(Json(report))
}

fn job_id(req: &TrainRequest, data: &TrainingDataset) -> String {
    let mut h = Sha256::new();
    h.update(serde_json::to_vec(req).expect("train request serializes"));
    h.update((data.dimension() as u64).to_le_bytes());
    for (f, y) in data.rows() {
        for x in f {
            h.update(x.to_bits().to_le_bytes());
        }
        h.update(y.to_bits().to_le_bytes());
    }
    hex::encode(h.finalize())
}

async fn train_start(State(st): State<Arc<AppState>>, ApiJson(req): ApiJson<TrainRequest>) -> Result<Response, ApiError> {
    req.config.validate()?;
    let data = match req.inline_dataset()? {
        Some(d) => d,
        None => {
            let path = st.corpus_path(req.corpus.as_deref().unwrap_or_default())?;
            TrainingDataset::from_incidents(&load_corpus(path)?)?
        }
    };
    let id = job_id(&req, &data);
    {
        let mut jobs = st.jobs.lock().expect("job table lock");
        if let Some(status) = jobs.get(&id) {
            let view = JobView { id, status: status.clone() };
            return Ok((StatusCode::OK, Json(view)).into_response());
        }
        jobs.insert(id.clone(), JobStatus::Running);
    }
    let job = id.clone();
    let state = st.clone();
    tokio::spawn(async move {
        let outcome = tokio::task::spawn_blocking(move || bodies::train(&data, &req)).await;
        let status = match outcome {
            Ok(Ok(result)) => JobStatus::Done { result: Box::new(result) },
            Ok(Err(e)) => JobStatus::Failed { error: ApiError::from(e).body.error },
            Err(join) => JobStatus::Failed {
                error: error::ErrorDetail { kind: "internal".into(), message: join.to_string(), field: None },
            },
        };
        state.jobs.lock().expect("job table lock").insert(job, status);
    });
    Ok((StatusCode::ACCEPTED, Json(JobView { id, status: JobStatus::Running })).into_response())
}

async fn train_poll(State(st): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> ApiResult<JobView> {
    let jobs = st.jobs.lock().expect("job table lock");
    let status = jobs.get(&id).cloned().ok_or_else(|| ApiError::not_found("training job", &id))?;
    Ok(Json(JobView { id, status }))
}

async fn session_create(State(st): State<Arc<AppState>>, ApiJson(req): ApiJson<CreateSession>) -> Result<Response, ApiError> {
    let s = st.sessions.create(req).await?;
    Ok((StatusCode::CREATED, Json(s)).into_response())
}

async fn session_get(State(st): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> ApiResult<session::Session> {
    st.sessions.get(&id).await.map(Json).ok_or_else(|| ApiError::not_found("session", &id))
}

async fn session_round(
    State(st): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    ApiJson(action): ApiJson<RoundAction>,
) -> ApiResult<session::Session> {
    match st.sessions.apply(&id, action).await {
        None => Err(ApiError::not_found("session", &id)),
        Some(Ok(s)) => Ok(Json(s)),
        Some(Err(SessionError::Resolved(id))) => Err(ApiError::conflict(format!("session `{id}` is already resolved"))),
        Some(Err(SessionError::Engine(e))) => Err(e.into()),
    }
}

async fn health() -> Json<bodies::Health> {
    Json(bodies::health())
}

async fn authorize(State(st): State<Arc<AppState>>, req: Request, next: Next) -> Response {
    if let Some(token) = &st.token {
        if req.uri().path() != "/v1/health" {
            let expected = format!("Bearer {token}");
            let ok = req
                .headers()
                .get(header::AUTHORIZATION)
                .and_then(|v| v.to_str().ok())
                .is_some_and(|v| v == expected);
            if !ok {
                return ApiError::unauthorized().into_response();
            }
        }
    }
    next.run(req).await
}

async fn stamp(req: Request, next: Next) -> Response {
    let mut res = next.run(req).await;
    let headers = res.headers_mut();
    headers.insert(VERSION_HEADER, HeaderValue::from_static(ENGINE_VERSION));
    headers.insert(CONVENTION_HEADER, HeaderValue::from_static(CONVENTION_NOTE));
    res
}

async fn fallback() -> ApiError {
    ApiError::new(StatusCode::NOT_FOUND, "not_found", "no such route")
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/v1/score", post(score))
        .route("/v1/weights/aggregate", post(aggregate))
        .route("/v1/sensitivity", post(sensitivity))
        .route("/v1/train", post(train_start))
        .route("/v1/train/{id}", get(train_poll))
        .route("/v1/thresholds", get(thresholds))
        .route("/v1/retrospective", post(retrospective))
        .route("/v1/sessions", post(session_create))
        .route("/v1/sessions/{id}", get(session_get))
        .route("/v1/sessions/{id}/rounds", post(session_round))
        .route("/v1/health", get(health))
        .fallback(fallback)
        .layer(middleware::from_fn_with_state(state.clone(), authorize))
        .layer(middleware::from_fn(stamp))
        .with_state(state)
}

/// Bind and serve until the process is stopped.
pub async fn serve(cfg: ServiceConfig) -> std::io::Result<()> {
    let state = AppState::from_config(&cfg).map_err(std::io::Error::other)?;
    let addr = cfg.listen.unwrap_or_else(|| SocketAddr::from(([127, 0, 0, 1], 8080)));
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state)).await
}
