//! Response bodies must keep the field names and JSON types recorded in
//! `tests/golden/`.

mod common;

use std::path::PathBuf;
use std::sync::Arc;

use axum::http::StatusCode;
use common::{app, call, post_text, state, trained};
use intentd::api::MetricsSummary;
use intentd::server::{self, AppState};
use intentd_core::dispatch::{Controller, IntentRegistry};
use intentd_core::trainer::{evaluate, save_checkpoint};
use serde_json::Value;

fn golden(name: &str) -> Value {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/golden")
        .join(name);
    serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap()
}

fn type_name(v: &Value) -> &'static str {
    match v {
        Value::Null => "null",
        Value::Bool(_) => "boolean",
        Value::Number(n) if n.is_u64() || n.is_i64() => "integer",
        Value::Number(_) => "number",
        Value::String(_) => "string",
        Value::Array(_) => "array",
        Value::Object(_) => "object",
    }
}

fn conform(v: &Value, shape: &Value, path: &str) -> Result<(), String> {
    match shape {
        Value::String(alts) => {
            let t = type_name(v);
            let ok = alts
                .split('|')
                .any(|a| a == t || (a == "number" && t == "integer"));
            if ok {
                Ok(())
            } else {
                Err(format!("{path}: expected {alts}, found {t}"))
            }
        }
        Value::Array(item) => {
            let arr = v
                .as_array()
                .ok_or_else(|| format!("{path}: expected array"))?;
            arr.iter()
                .enumerate()
                .try_for_each(|(i, x)| conform(x, &item[0], &format!("{path}[{i}]")))
        }
        Value::Object(fields) => {
            let obj = v
                .as_object()
                .ok_or_else(|| format!("{path}: expected object"))?;
            let mut want: Vec<&String> = fields.keys().collect();
            let mut have: Vec<&String> = obj.keys().collect();
            want.sort();
            have.sort();
            if want != have {
                return Err(format!("{path}: fields {have:?} differ from {want:?}"));
            }
            fields
                .iter()
                .try_for_each(|(k, s)| conform(&obj[k], s, &format!("{path}.{k}")))
        }
        other => Err(format!("{path}: bad golden entry {other}")),
    }
}

fn assert_shape(v: &Value, file: &str) {
    if let Err(e) = conform(v, &golden(file), "$") {
        panic!("{file}: {e}\nbody: {v}");
    }
}

const OUTCOMES: [&str; 4] = [
    "executed",
    "unrecognized",
    "rejected_low_confidence",
    "error",
];

#[tokio::test]
async fn instruction_events() {
    let app = app(state(None));
    for text in ["turn on the light", "", "zzzz", "turn on the light"] {
        let (s, ev) = post_text(&app, text).await;
        assert_eq!(s, StatusCode::OK);
        assert_shape(&ev, "event.json");
        assert!(OUTCOMES.contains(&ev["outcome"].as_str().unwrap()));
    }
    let strict = Controller::new(IntentRegistry::bundled().with_threshold(1.0).unwrap());
    let app2 = server::router(
        Arc::new(AppState::new(trained().checkpoint.clone(), strict, None)),
        None,
    )
    .unwrap();
    let (_, ev) = post_text(&app2, "turn on the fan").await;
    assert_eq!(ev["outcome"], "rejected_low_confidence");
    assert_shape(&ev, "event.json");

    let (_, events) = call(&app, "GET", "/api/events?since=0", None).await;
    assert_eq!(events.as_array().unwrap().len(), 4);
    for ev in events.as_array().unwrap() {
        assert_shape(ev, "event.json");
    }
}

#[tokio::test]
async fn devices_model_and_errors() {
    let app = app(state(None));
    post_text(&app, "turn on the light").await;
    let (_, devices) = call(&app, "GET", "/api/devices", None).await;
    assert_shape(&devices, "devices.json");
    for d in devices.as_array().unwrap() {
        assert!(["on", "off"].contains(&d["state"].as_str().unwrap()));
    }
    let (_, model) = call(&app, "GET", "/api/model", None).await;
    assert_shape(&model, "model.json");

    for (method, uri, body) in [
        ("POST", "/api/instructions", Some("{}")),
        ("GET", "/api/metrics", None),
        ("GET", "/api/events?since=x", None),
    ] {
        let (s, e) = call(&app, method, uri, body).await;
        assert!(s.is_client_error());
        assert_shape(&e, "error.json");
    }
    let (s, e) = post_text(&app, &"w".repeat(1500)).await;
    assert_eq!(s, StatusCode::PAYLOAD_TOO_LARGE);
    assert_shape(&e, "error.json");
}

#[tokio::test]
async fn metrics_summary() {
    let t = trained();
    let eval = evaluate(&t.checkpoint, &t.test).unwrap();
    let st = AppState::new(
        t.checkpoint.clone(),
        Controller::new(IntentRegistry::bundled()),
        Some(MetricsSummary::new("bundled", &eval)),
    );
    let app = server::router(Arc::new(st), None).unwrap();
    let (s, m) = call(&app, "GET", "/api/metrics", None).await;
    assert_eq!(s, StatusCode::OK);
    assert_shape(&m, "metrics.json");
    assert_eq!(m["confusion"].as_array().unwrap().len(), 14);
}

#[tokio::test]
async fn failed_instruction() {
    let mut broken = trained().checkpoint.clone();
    broken.params.w_i = intentd_core::neural::Tensor::zeros(128, 3);
    let app = server::router(
        Arc::new(AppState::new(
            broken,
            Controller::new(IntentRegistry::bundled()),
            None,
        )),
        None,
    )
    .unwrap();
    let (s, body) = post_text(&app, "turn on the light").await;
    assert_eq!(s, StatusCode::INTERNAL_SERVER_ERROR);
    assert_shape(&body, "failed_instruction.json");
}

#[test]
fn cli_prediction() {
    let dir = tempfile::tempdir().unwrap();
    let model = dir.path().join("m.ckpt");
    save_checkpoint(&trained().checkpoint, &model).unwrap();
    for text in ["turn on the fan", "", "blah blah"] {
        let mut out = Vec::new();
        let mut err = Vec::new();
        let code = intentd::cli::run(
            [
                "intentd",
                "predict",
                "--model",
                model.to_str().unwrap(),
                "--text",
                text,
            ],
            &mut std::io::empty(),
            &mut out,
            &mut err,
        );
        assert_eq!(code, 0, "{}", String::from_utf8_lossy(&err));
        let v: Value = serde_json::from_slice(&out).unwrap();
        assert_shape(&v, "prediction.json");
    }
}
