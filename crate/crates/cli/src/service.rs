//! HTTP inference service: `POST /detect` and `GET /health`.

use std::net::SocketAddr;
use std::sync::Arc;

use axum::extract::multipart::MultipartRejection;
use axum::extract::{DefaultBodyLimit, Multipart, State};
use axum::http::{HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use cxr_core::data::decode_any;
use cxr_core::train::Classifier;
use cxr_core::weights::{ModelBundle, FORMAT_VERSION};
use serde::Serialize;
use tower_http::cors::{AllowOrigin, Any, CorsLayer};

pub const COVID_VERDICT: &str = "Result:: Xray is Abnormal!! COVID detected";
pub const NORMAL_VERDICT: &str = "Result:: Congrats!! Xray is Normal. No Abnormality Found.";
pub const DEFAULT_BODY_LIMIT: usize = 10 * 1024 * 1024;

/// Human-readable verdict for a predicted label.
pub fn verdict(label: &str) -> String {
    match label {
        "covid" => COVID_VERDICT.to_string(),
        "normal" => NORMAL_VERDICT.to_string(),
        other => format!("Result:: {other}"),
    }
}

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub threshold: Option<f32>,
    pub body_limit: usize,
    /// Return the bare verdict as `text/plain` instead of JSON.
    pub plain: bool,
    /// Allowed CORS origins; empty allows any origin.
    pub cors_origins: Vec<String>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            threshold: None,
            body_limit: DEFAULT_BODY_LIMIT,
            plain: false,
            cors_origins: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct DetectResponse {
    pub label: String,
    pub probability: f32,
    pub message: String,
    pub model_id: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub patient: Option<String>,
}

#[derive(Debug, Serialize)]
struct HealthResponse<'a> {
    status: &'static str,
    model_id: &'a str,
    format_version: u32,
}

struct AppState {
    classifier: Classifier,
    model_id: String,
    threshold: Option<f32>,
    plain: bool,
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    code: &'static str,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self {
            status,
            code,
            message: message.into(),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = serde_json::json!({ "code": self.code, "error": self.message });
        (self.status, Json(body)).into_response()
    }
}

/// Builds the router. The classifier is created once and shared read-only.
pub fn router(bundle: &ModelBundle, config: &ServiceConfig) -> anyhow::Result<Router> {
    let state = Arc::new(AppState {
        classifier: Classifier::new(bundle)?,
        model_id: bundle.model_id()?,
        threshold: config.threshold,
        plain: config.plain,
    });
    let cors = if config.cors_origins.is_empty() {
        CorsLayer::new().allow_origin(Any).allow_methods(Any).allow_headers(Any)
    } else {
        let origins = config
            .cors_origins
            .iter()
            .map(|o| HeaderValue::from_str(o))
            .collect::<Result<Vec<_>, _>>()?;
        CorsLayer::new().allow_origin(AllowOrigin::list(origins)).allow_methods(Any).allow_headers(Any)
    };
    Ok(Router::new()
        .route("/detect", post(detect))
        .route("/health", get(health))
        .method_not_allowed_fallback(method_not_allowed)
        .fallback(not_found)
        .layer(DefaultBodyLimit::max(config.body_limit))
        .layer(cors)
        .with_state(state))
}

async fn method_not_allowed() -> ApiError {
    ApiError::new(StatusCode::METHOD_NOT_ALLOWED, "method_not_allowed", "method not allowed for this route")
}

async fn not_found() -> ApiError {
    ApiError::new(StatusCode::NOT_FOUND, "not_found", "no such route")
}

async fn health(State(state): State<Arc<AppState>>) -> Response {
    Json(HealthResponse {
        status: "ok",
        model_id: &state.model_id,
        format_version: FORMAT_VERSION,
    })
    .into_response()
}

fn multipart_error(status: StatusCode, text: String) -> ApiError {
    if status == StatusCode::PAYLOAD_TOO_LARGE {
        ApiError::new(status, "payload_too_large", text)
    } else {
        ApiError::new(StatusCode::BAD_REQUEST, "bad_multipart", text)
    }
}

async fn detect(State(state): State<Arc<AppState>>, form: Result<Multipart, MultipartRejection>) -> Result<Response, ApiError> {
    let mut form = form.map_err(|e| multipart_error(e.status(), e.body_text()))?;
    let mut file = None;
    let mut patient = None;
    while let Some(field) = form.next_field().await.map_err(|e| multipart_error(e.status(), e.body_text()))? {
        match field.name() {
            Some("file") => file = Some(field.bytes().await.map_err(|e| multipart_error(e.status(), e.body_text()))?),
            Some("patient") => patient = Some(field.text().await.map_err(|e| multipart_error(e.status(), e.body_text()))?),
            _ => {}
        }
    }
    let file = file.ok_or_else(|| ApiError::new(StatusCode::BAD_REQUEST, "missing_file", "multipart part `file` is required"))?;
    let pixels = decode_any(&file).map_err(|e| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "undecodable_image", e.to_string()))?;

    let worker = Arc::clone(&state);
    let prediction = tokio::task::spawn_blocking(move || worker.classifier.predict_with_threshold(&pixels, worker.threshold))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))?
        .map_err(|e| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "unusable_image", e.to_string()))?;

    let message = verdict(&prediction.label);
    tracing::info!(label = %prediction.label, probability = prediction.positive_probability(), "detect");
    if state.plain {
        return Ok(message.into_response());
    }
    Ok(Json(DetectResponse {
        label: prediction.label.clone(),
        probability: prediction.positive_probability(),
        message,
        model_id: state.model_id.clone(),
        patient,
    })
    .into_response())
}

/// Binds `addr` and serves until Ctrl-C.
pub async fn serve(bundle: &ModelBundle, addr: SocketAddr, config: &ServiceConfig) -> anyhow::Result<()> {
    let app = router(bundle, config)?;
    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .map_err(|e| anyhow::anyhow!("cannot bind {addr}: {e}"))?;
    tracing::info!(address = %listener.local_addr()?, model_id = %bundle.model_id()?, "serving");
    axum::serve(listener, app)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
