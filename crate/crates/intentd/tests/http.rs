mod common;

use std::sync::Arc;
use std::time::{Duration, Instant};

use axum::http::StatusCode;
use common::{app, call, post_text, state, trained};
use intentd::api::MetricsSummary;
use intentd::server::{self, AppState};
use intentd_core::dispatch::{read_event_log, replay, Controller, DeviceStore, IntentRegistry};
use intentd_core::trainer::evaluate;
use serde_json::Value;

fn device<'a>(devices: &'a Value, id: &str) -> &'a Value {
    devices
        .as_array()
        .unwrap()
        .iter()
        .find(|d| d["device_id"] == id)
        .unwrap()
}

#[tokio::test]
async fn heater_off_after_on() {
    let app = app(state(None));
    let (s, ev) = post_text(&app, "turn on the heater").await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(ev["outcome"], "executed");
    let (s, ev) = post_text(&app, "turn off the heater").await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(ev["outcome"], "executed", "{ev}");
    assert_eq!(ev["device_state"], "off");
    let (_, devices) = call(&app, "GET", "/api/devices", None).await;
    assert_eq!(device(&devices, "heater")["state"], "off");
    assert_eq!(devices.as_array().unwrap().len(), 7);
}

#[tokio::test]
async fn malformed_bodies_are_rejected() {
    let app = app(state(None));
    for body in ["{}", "not json", r#"{"text": 5}"#, "", "[]"] {
        let (s, v) = call(&app, "POST", "/api/instructions", Some(body)).await;
        assert_eq!(s, StatusCode::BAD_REQUEST, "{body:?}");
        assert!(v["error"].is_string());
    }
    let (_, events) = call(&app, "GET", "/api/events?since=0", None).await;
    assert_eq!(events, Value::Array(vec![]));
}

#[tokio::test]
async fn oversized_text_is_413() {
    let app = app(state(None));
    let (s, v) = post_text(&app, &"a".repeat(1025)).await;
    assert_eq!(s, StatusCode::PAYLOAD_TOO_LARGE);
    assert!(v["error"].is_string());
    let (s, _) = post_text(&app, &"é".repeat(1024)).await;
    assert_eq!(s, StatusCode::OK);
}

#[tokio::test]
async fn events_are_ordered_and_filtered() {
    let app = app(state(None));
    post_text(&app, "turn on the tv").await;
    post_text(&app, "turn off the tv").await;
    let (s, events) = call(&app, "GET", "/api/events?since=0", None).await;
    assert_eq!(s, StatusCode::OK);
    let seqs: Vec<u64> = events
        .as_array()
        .unwrap()
        .iter()
        .map(|e| e["sequence_no"].as_u64().unwrap())
        .collect();
    assert_eq!(seqs, vec![1, 2]);
    let (_, later) = call(&app, "GET", "/api/events?since=1", None).await;
    assert_eq!(later.as_array().unwrap().len(), 1);
    let (s, _) = call(&app, "GET", "/api/events?since=-4", None).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn long_poll_times_out_empty() {
    let app = app(state(None));
    let t = Instant::now();
    let (s, v) = call(&app, "GET", "/api/events?since=0", None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v, Value::Array(vec![]));
    assert!(t.elapsed() >= Duration::from_millis(250));
}

#[tokio::test]
async fn long_poll_wakes_on_new_event() {
    let st = Arc::new(
        AppState::new(
            trained().checkpoint.clone(),
            Controller::new(IntentRegistry::bundled()),
            None,
        )
        .with_long_poll(Duration::from_secs(20)),
    );
    let app = app(st);
    let waiter = {
        let app = app.clone();
        tokio::spawn(async move {
            let t = Instant::now();
            let r = call(&app, "GET", "/api/events?since=0", None).await;
            (r, t.elapsed())
        })
    };
    tokio::time::sleep(Duration::from_millis(100)).await;
    post_text(&app, "fan on please").await;
    let ((s, events), waited) = waiter.await.unwrap();
    assert_eq!(s, StatusCode::OK);
    assert_eq!(events.as_array().unwrap().len(), 1);
    assert!(waited < Duration::from_secs(5));
}

#[tokio::test]
async fn model_and_metrics() {
    let app = app(state(None));
    let (s, m) = call(&app, "GET", "/api/model", None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(m["labels"].as_array().unwrap().len(), 14);
    assert_eq!(m["hidden_units"], 128);
    assert_eq!(m["profile"], "regularized");
    assert_eq!(m["seed"], 42);
    assert_eq!(m["vocab_size"], trained().checkpoint.tfidf.dim());

    let (s, v) = call(&app, "GET", "/api/metrics", None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    assert!(v["error"].is_string());

    let t = trained();
    let eval = evaluate(&t.checkpoint, &t.test).unwrap();
    let st = AppState::new(
        t.checkpoint.clone(),
        Controller::new(IntentRegistry::bundled()),
        Some(MetricsSummary::new("test", &eval)),
    );
    let app = server::router(Arc::new(st), None).unwrap();
    let (s, v) = call(&app, "GET", "/api/metrics", None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["items"], 28);
    assert!((v["accuracy"].as_f64().unwrap() - eval.accuracy).abs() < 1e-12);
}

#[tokio::test]
async fn unknown_route_is_json_404() {
    let app = app(state(None));
    let (s, v) = call(&app, "GET", "/api/nothing", None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    assert!(v["error"].is_string());
}

#[tokio::test]
async fn every_ok_post_appends_one_line_and_replays() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("events.jsonl");
    let app = app(state(Some(&log)));
    let texts = [
        "turn on the light",
        "",
        "qwerty",
        "switch on the water pump",
        "tv on please",
        "turn off the light",
    ];
    for (i, t) in texts.iter().enumerate() {
        let (s, _) = post_text(&app, t).await;
        assert_eq!(s, StatusCode::OK);
        assert_eq!(
            std::fs::read_to_string(&log).unwrap().lines().count(),
            i + 1
        );
    }
    post_text(&app, &"x".repeat(2000)).await;
    call(&app, "POST", "/api/instructions", Some("{}")).await;
    let events = read_event_log(&log).unwrap();
    assert_eq!(events.len(), texts.len());

    let mut fresh = DeviceStore::from_registry(&IntentRegistry::bundled());
    replay(&events, &mut fresh);
    let (_, devices) = call(&app, "GET", "/api/devices", None).await;
    assert_eq!(serde_json::to_value(fresh.snapshot()).unwrap(), devices);
}

#[tokio::test]
async fn classification_failure_is_500_and_logged() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("events.jsonl");
    let mut broken = trained().checkpoint.clone();
    broken.params.w_i = intentd_core::neural::Tensor::zeros(128, 3);
    let controller = Controller::new(IntentRegistry::bundled())
        .with_log(&log)
        .unwrap();
    let app = server::router(Arc::new(AppState::new(broken, controller, None)), None).unwrap();
    let (s, v) = post_text(&app, "turn on the light").await;
    assert_eq!(s, StatusCode::INTERNAL_SERVER_ERROR);
    assert!(v["error"].is_string());
    assert_eq!(v["event"]["outcome"], "error");
    assert_eq!(read_event_log(&log).unwrap().len(), 1);
}

#[tokio::test]
async fn cors_origin_is_configurable() {
    use axum::body::Body;
    use axum::http::Request;
    use tower::ServiceExt;

    let app = server::router(state(None), Some("http://console.local")).unwrap();
    let req = Request::builder()
        .method("OPTIONS")
        .uri("/api/instructions")
        .header("origin", "http://console.local")
        .header("access-control-request-method", "POST")
        .body(Body::empty())
        .unwrap();
    let resp = app.oneshot(req).await.unwrap();
    assert_eq!(
        resp.headers().get("access-control-allow-origin").unwrap(),
        "http://console.local"
    );
    assert!(server::router(state(None), Some("bad\norigin")).is_err());
}
