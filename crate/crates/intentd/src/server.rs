//! JSON-over-HTTP front end for the dispatch controller.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, MutexGuard};
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::{Query, State};
use axum::http::{header, HeaderValue, Method, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use intentd_core::dispatch::{classify_instruction, Controller, FeedbackEvent};
use intentd_core::trainer::Checkpoint;
use serde::Serialize;
use tokio::sync::watch;
use tower_http::cors::{AllowOrigin, CorsLayer};

use crate::api::{ErrorBody, InstructionRequest, MetricsSummary, ModelInfo, MAX_INSTRUCTION_CHARS};

pub const LONG_POLL: Duration = Duration::from_secs(25);

pub struct AppState {
    checkpoint: Arc<Checkpoint>,
    controller: Mutex<Controller>,
    latest: watch::Sender<u64>,
    model: ModelInfo,
    metrics: Option<MetricsSummary>,
    long_poll: Duration,
}

impl AppState {
    pub fn new(
        checkpoint: Checkpoint,
        controller: Controller,
        metrics: Option<MetricsSummary>,
    ) -> Self {
        let (latest, _) = watch::channel(controller.last_sequence_no());
        Self {
            model: ModelInfo::of(&checkpoint),
            checkpoint: Arc::new(checkpoint),
            controller: Mutex::new(controller),
            latest,
            metrics,
            long_poll: LONG_POLL,
        }
    }

    /// Longest time `GET /api/events` waits for a new event.
    pub fn with_long_poll(mut self, d: Duration) -> Self {
        self.long_poll = d;
        self
    }

    pub fn controller(&self) -> MutexGuard<'_, Controller> {
        self.controller.lock().unwrap_or_else(|e| e.into_inner())
    }
}

fn error(status: StatusCode, msg: impl Into<String>) -> Response {
    (status, Json(ErrorBody::new(msg))).into_response()
}

#[derive(Serialize)]
struct FailedEvent<'a> {
    error: &'a str,
    event: &'a FeedbackEvent,
}

async fn post_instruction(State(s): State<Arc<AppState>>, body: Bytes) -> Response {
    let req: InstructionRequest = match serde_json::from_slice(&body) {
        Ok(r) => r,
        Err(e) => {
            return error(
                StatusCode::BAD_REQUEST,
                format!("invalid request body: {e}"),
            )
        }
    };
    if req.text.chars().count() > MAX_INSTRUCTION_CHARS {
        return error(
            StatusCode::PAYLOAD_TOO_LARGE,
            format!("instruction exceeds {MAX_INSTRUCTION_CHARS} characters"),
        );
    }
    let classified = classify_instruction(&req.text, &s.checkpoint);
    let handled = s.controller().apply(&req.text, &classified);
    match handled {
        Ok(h) => {
            s.latest.send_replace(h.event.sequence_no);
            if h.classification_failed {
                let body = FailedEvent {
                    error: &h.event.message,
                    event: &h.event,
                };
                (StatusCode::INTERNAL_SERVER_ERROR, Json(body)).into_response()
            } else {
                Json(h.event).into_response()
            }
        }
        Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
    }
}

async fn get_devices(State(s): State<Arc<AppState>>) -> Response {
    Json(s.controller().store().snapshot()).into_response()
}

async fn get_events(
    State(s): State<Arc<AppState>>,
    Query(q): Query<HashMap<String, String>>,
) -> Response {
    let since = match q.get("since").map(|v| v.parse::<u64>()) {
        None => 0,
        Some(Ok(v)) => v,
        Some(Err(_)) => {
            return error(
                StatusCode::BAD_REQUEST,
                "`since` must be a non-negative integer",
            )
        }
    };
    let mut rx = s.latest.subscribe();
    let deadline = tokio::time::Instant::now() + s.long_poll;
    loop {
        let events = s.controller().events_since(since).to_vec();
        if !events.is_empty() {
            return Json(events).into_response();
        }
        match tokio::time::timeout_at(deadline, rx.changed()).await {
            Ok(Ok(())) => continue,
            _ => return Json(Vec::<FeedbackEvent>::new()).into_response(),
        }
    }
}

async fn get_model(State(s): State<Arc<AppState>>) -> Response {
    Json(s.model.clone()).into_response()
}

async fn get_metrics(State(s): State<Arc<AppState>>) -> Response {
    match &s.metrics {
        Some(m) => Json(m).into_response(),
        None => error(StatusCode::NOT_FOUND, "no evaluation has been run"),
    }
}

async fn not_found() -> Response {
    error(StatusCode::NOT_FOUND, "no such endpoint")
}

fn cors(origin: &str) -> anyhow::Result<CorsLayer> {
    let allow = if origin == "*" {
        AllowOrigin::any()
    } else {
        AllowOrigin::exact(HeaderValue::from_str(origin)?)
    };
    Ok(CorsLayer::new()
        .allow_origin(allow)
        .allow_methods([Method::GET, Method::POST])
        .allow_headers([header::CONTENT_TYPE]))
}

pub fn router(state: Arc<AppState>, cors_origin: Option<&str>) -> anyhow::Result<Router> {
    let mut app = Router::new()
        .route("/api/instructions", post(post_instruction))
        .route("/api/devices", get(get_devices))
        .route("/api/events", get(get_events))
        .route("/api/model", get(get_model))
        .route("/api/metrics", get(get_metrics))
        .fallback(not_found)
        .with_state(state);
    if let Some(origin) = cors_origin {
        app = app.layer(cors(origin)?);
    }
    Ok(app)
}

/// Serves `app` on `listener` until Ctrl-C.
pub async fn run(listener: tokio::net::TcpListener, app: Router) -> std::io::Result<()> {
    axum::serve(listener, app)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
