#![allow(dead_code)]

use std::path::Path;
use std::sync::{Arc, OnceLock};
use std::time::Duration;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use intentd::server::{self, AppState};
use intentd_core::corpus::{bundled_dataset, stratified_split, Dataset};
use intentd_core::dispatch::{Controller, IntentRegistry};
use intentd_core::trainer::{train, Checkpoint, TrainConfig};
use serde_json::Value;
use tower::ServiceExt;

pub struct Trained {
    pub checkpoint: Checkpoint,
    pub train: Dataset,
    pub test: Dataset,
}

/// Regularized profile, seed 42, on the bundled 112/28 split.
pub fn trained() -> &'static Trained {
    static T: OnceLock<Trained> = OnceLock::new();
    T.get_or_init(|| {
        let (train_set, test) = stratified_split(&bundled_dataset(), 0.2, 42).unwrap();
        let out = train(&TrainConfig::regularized(42), &train_set, &test).unwrap();
        Trained {
            checkpoint: out.checkpoint,
            train: train_set,
            test,
        }
    })
}

pub fn state(log: Option<&Path>) -> Arc<AppState> {
    let mut controller = Controller::new(IntentRegistry::bundled());
    if let Some(p) = log {
        controller = controller.with_log(p).unwrap();
    }
    Arc::new(
        AppState::new(trained().checkpoint.clone(), controller, None)
            .with_long_poll(Duration::from_millis(300)),
    )
}

pub fn app(state: Arc<AppState>) -> Router {
    server::router(state, None).unwrap()
}

pub async fn call(
    app: &Router,
    method: &str,
    uri: &str,
    body: Option<&str>,
) -> (StatusCode, Value) {
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json")
        .body(
            body.map(|b| Body::from(b.to_owned()))
                .unwrap_or_else(Body::empty),
        )
        .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let json = if bytes.is_empty() {
        Value::Null
    } else {
        serde_json::from_slice(&bytes)
            .unwrap_or_else(|_| Value::String(String::from_utf8_lossy(&bytes).into_owned()))
    };
    (status, json)
}

pub async fn post_text(app: &Router, text: &str) -> (StatusCode, Value) {
    let body = serde_json::json!({ "text": text }).to_string();
    call(app, "POST", "/api/instructions", Some(&body)).await
}
