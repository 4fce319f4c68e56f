//! axum service exposing detection, repair, calibration and simulation
//! over JSON. Model backends are loaded once at startup; every request
//! runs its CPU-bound work on the blocking pool.

use std::sync::Arc;

use advrepair_core::api::{
    run_calibrate, run_detect, run_repair, run_simulate, CalibrateRequest, DetectRequest, ErrorBody, ErrorKind, Health,
    OpError, RepairRequest, SimulateRequest,
};
use advrepair_core::config::{Backends, RunConfig};
use advrepair_core::services::{ClassifyRequest, ClassifyResponse};
use advrepair_core::ClassifierError;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};

/// Loaded backends plus the defaults applied to every repair request.
pub struct AppState {
    pub backends: Backends,
    pub defaults: RunConfig,
}

type Shared = Arc<AppState>;

pub struct ApiError(OpError);

impl From<OpError> for ApiError {
    fn from(e: OpError) -> Self {
        ApiError(e)
    }
}

fn status_of(kind: ErrorKind) -> StatusCode {
    match kind {
        ErrorKind::Config => StatusCode::BAD_REQUEST,
        ErrorKind::Io => StatusCode::UNPROCESSABLE_ENTITY,
        ErrorKind::Transport => StatusCode::BAD_GATEWAY,
        ErrorKind::Internal => StatusCode::INTERNAL_SERVER_ERROR,
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = ErrorBody {
            error: self.0.message,
            kind: self.0.kind,
        };
        (status_of(body.kind), Json(body)).into_response()
    }
}

fn internal(message: impl Into<String>) -> ApiError {
    ApiError(OpError {
        kind: ErrorKind::Internal,
        message: message.into(),
    })
}

/// Run `f` on the blocking pool.
async fn blocking<T, F>(f: F) -> Result<T, ApiError>
where
    T: Send + 'static,
    F: FnOnce() -> Result<T, OpError> + Send + 'static,
{
    match tokio::task::spawn_blocking(f).await {
        Ok(r) => r.map_err(ApiError),
        Err(e) => Err(internal(format!("worker failed: {e}"))),
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/v1/classify", post(classify_first))
        .route("/models/{index}/v1/classify", post(classify_model))
        .route("/v1/detect", post(detect))
        .route("/v1/repair", post(repair))
        .route("/v1/calibrate", post(calibrate))
        .route("/v1/simulate", post(simulate))
        .with_state(Arc::new(state))
}

async fn health(State(state): State<Shared>) -> Json<Health> {
    let d = &state.backends.detector;
    Json(Health {
        status: "ok".into(),
        models: d.models().iter().map(|m| m.id().to_string()).collect(),
        labels: d.labels().names().to_vec(),
        epsilon: d.epsilon(),
    })
}

fn classifier_error(e: ClassifierError) -> OpError {
    let kind = match e {
        ClassifierError::EmptyInput { .. } => ErrorKind::Config,
        ref c if c.is_transport() => ErrorKind::Transport,
        _ => ErrorKind::Internal,
    };
    OpError {
        kind,
        message: e.to_string(),
    }
}

async fn classify_with(state: Shared, index: usize, req: ClassifyRequest) -> Result<Json<ClassifyResponse>, ApiError> {
    let count = state.backends.detector.models().len();
    if index >= count {
        return Err(ApiError(OpError {
            kind: ErrorKind::Config,
            message: format!("model index {index} out of range (have {count})"),
        }));
    }
    if req.texts.is_empty() {
        return Err(ApiError(OpError {
            kind: ErrorKind::Config,
            message: "texts must not be empty".into(),
        }));
    }
    blocking(move || {
        let model = &state.backends.detector.models()[index];
        let texts: Vec<&str> = req.texts.iter().map(String::as_str).collect();
        let probs = model.classify_batch(&texts).map_err(classifier_error)?;
        Ok(ClassifyResponse {
            probs: probs.into_iter().map(|p| p.probs().to_vec()).collect(),
        })
    })
    .await
    .map(Json)
}

async fn classify_first(
    State(state): State<Shared>,
    Json(req): Json<ClassifyRequest>,
) -> Result<Json<ClassifyResponse>, ApiError> {
    classify_with(state, 0, req).await
}

async fn classify_model(
    State(state): State<Shared>,
    Path(index): Path<usize>,
    Json(req): Json<ClassifyRequest>,
) -> Result<Json<ClassifyResponse>, ApiError> {
    classify_with(state, index, req).await
}

async fn detect(State(state): State<Shared>, Json(req): Json<DetectRequest>) -> Result<impl IntoResponse, ApiError> {
    blocking(move || run_detect(&req, &state.backends)).await.map(Json)
}

async fn repair(
    State(state): State<Shared>,
    Json(mut req): Json<RepairRequest>,
) -> Result<impl IntoResponse, ApiError> {
    // backends are fixed at startup; only tunables may vary per request
    let c = &mut req.config;
    c.models = None;
    c.embeddings = None;
    c.classifier_url = None;
    c.labels = None;
    c.translator_url = None;
    c.calibration = None;
    c.out = None;
    c.server = None;
    blocking(move || run_repair(&req, &state.defaults, &state.backends))
        .await
        .map(Json)
}

async fn calibrate(
    State(state): State<Shared>,
    Json(req): Json<CalibrateRequest>,
) -> Result<impl IntoResponse, ApiError> {
    blocking(move || run_calibrate(&req, &state.backends)).await.map(Json)
}

async fn simulate(Json(req): Json<SimulateRequest>) -> Result<impl IntoResponse, ApiError> {
    blocking(move || run_simulate(&req)).await.map(Json)
}

/// Serve until the listener fails or `shutdown` resolves.
pub async fn serve(
    listener: tokio::net::TcpListener,
    state: AppState,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, router(state))
        .with_graceful_shutdown(shutdown)
        .await
}
