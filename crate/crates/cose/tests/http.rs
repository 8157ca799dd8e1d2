use std::time::Instant;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

use cose::server::{router, AppState, Loaded, RolloutResponse};
use cose_core::checkpoint::{save_checkpoint, Checkpoint};
use cose_core::codec::CodecConfig;
use cose_core::infer::{suggest, SuggestOptions, Suggestions};
use cose_core::ink::Stroke;
use cose_core::relational::RelationalConfig;
use cose_core::train::{TrainConfig, Trainer};
use cose_core::ModelConfig;

fn toy_config(seed: u64) -> TrainConfig {
    TrainConfig {
        model: ModelConfig {
            codec: CodecConfig { enc_layers: 2, d_model: 32, d_ff: 64, heads: 4, dec_layers: 3, dec_width: 64, dec_components: 5, ..Default::default() },
            relational: RelationalConfig { layers: 2, d_model: 32, d_ff: 64, heads: 4, ..Default::default() },
        },
        seed,
        ..TrainConfig::default()
    }
}

fn saved_checkpoint(dir: &std::path::Path, seed: u64) -> std::path::PathBuf {
    let t = Trainer::new(toy_config(seed)).unwrap();
    save_checkpoint(&Checkpoint::from_trainer(&t), dir).unwrap()
}

fn app() -> (Router, AppState, tempfile::TempDir) {
    let dir = tempfile::tempdir().unwrap();
    let state = AppState::open(&saved_checkpoint(dir.path(), 1)).unwrap();
    (router(state.clone()), state, dir)
}

fn drawn() -> Value {
    json!([
        [[0.0, 0.0], [0.5, 0.0], [0.5, 0.5], [0.0, 0.5], [0.0, 0.0]],
        [[0.5, 0.25], [0.9, 0.25]],
        [[0.8, 0.15, 0.0], [0.9, 0.25, 20.0], [0.8, 0.35, 40.0]]
    ])
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<String>) -> (StatusCode, Vec<u8>) {
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json")
        .body(body.map(Body::from).unwrap_or_else(Body::empty))
        .unwrap();
    let res = app.clone().oneshot(req).await.unwrap();
    let status = res.status();
    (status, res.into_body().collect().await.unwrap().to_bytes().to_vec())
}

fn json_of(bytes: &[u8]) -> Value {
    serde_json::from_slice(bytes).unwrap()
}

#[tokio::test]
async fn health_reports_checkpoint_id() {
    let (app, _, _dir) = app();
    let (status, body) = call(&app, "GET", "/health", None).await;
    assert_eq!(status, StatusCode::OK);
    let v = json_of(&body);
    assert_eq!(v["status"], "ok");
    assert_eq!(v["checkpoint_id"].as_str().unwrap().len(), 12);
}

#[tokio::test]
async fn suggest_matches_in_process_call() {
    let (app, state, dir) = app();
    let req = json!({ "strokes": drawn(), "top_positions": 2, "top_strokes": 3, "n_points": 25 });
    let (status, body) = call(&app, "POST", "/suggest", Some(req.to_string())).await;
    assert_eq!(status, StatusCode::OK, "{}", String::from_utf8_lossy(&body));
    let over_http: Suggestions = serde_json::from_slice(&body).unwrap();

    let strokes: Vec<Stroke> = serde_json::from_value::<Vec<Vec<Vec<f64>>>>(drawn())
        .unwrap()
        .into_iter()
        .map(|s| cose_core::ink::drawing_from_arrays(vec![s], 1).unwrap().into_strokes().remove(0))
        .collect();
    let loaded = Loaded::from_file(dir.path()).unwrap();
    let local = suggest(&loaded.model, &strokes, &SuggestOptions { top_positions: 2, top_strokes: 3, n_points: 25 }).unwrap();
    assert_eq!(over_http, local);
    assert_eq!(over_http.suggestions.len(), 2);
    assert!(over_http.suggestions.iter().all(|s| s.strokes.len() == 3 && s.strokes[0].points.len() == 25));
    let mixture = &json_of(&body)["position_mixture"];
    assert_eq!(mixture["weights"].as_array().unwrap().len(), 10);
    drop(state);
}

#[tokio::test]
async fn suggest_defaults_and_latency() {
    let (app, _, _dir) = app();
    let body = json!({ "strokes": drawn() }).to_string();
    call(&app, "POST", "/suggest", Some(body.clone())).await;
    let t0 = Instant::now();
    let (status, bytes) = call(&app, "POST", "/suggest", Some(body)).await;
    let elapsed = t0.elapsed();
    assert_eq!(status, StatusCode::OK);
    let v = json_of(&bytes);
    assert_eq!(v["suggestions"].as_array().unwrap().len(), 2);
    assert_eq!(v["suggestions"][0]["strokes"].as_array().unwrap().len(), 3);
    assert_eq!(v["suggestions"][0]["strokes"][0]["points"].as_array().unwrap().len(), 50);
    assert!(elapsed.as_millis() < 200, "{elapsed:?}");
}

#[tokio::test]
async fn bad_requests_get_400_with_message() {
    let (app, _, _dir) = app();
    let cases = [
        "{not json".to_string(),
        json!({ "strokes": [] }).to_string(),
        json!({ "strokes": [[]] }).to_string(),
        json!({ "strokes": [[[0.0]]] }).to_string(),
        json!({ "top_positions": 1 }).to_string(),
        json!({ "strokes": drawn(), "top_positions": 0 }).to_string(),
    ];
    for body in cases {
        let (status, bytes) = call(&app, "POST", "/suggest", Some(body.clone())).await;
        assert_eq!(status, StatusCode::BAD_REQUEST, "{body}");
        assert!(!json_of(&bytes)["error"].as_str().unwrap().is_empty());
    }
    let (status, bytes) = call(&app, "POST", "/suggest", Some(json!({ "strokes": [] }).to_string())).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert!(json_of(&bytes)["error"].as_str().unwrap().contains("draw a first stroke"));
    let (status, _) = call(&app, "POST", "/rollout", Some(json!({ "strokes": drawn(), "temperature": 0.0 }).to_string())).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn rollout_replays_byte_for_byte() {
    let (app, _, _dir) = app();
    let req = json!({ "strokes": drawn(), "steps": 4, "temperature": 0.8, "seed": 11 }).to_string();
    let (status, a) = call(&app, "POST", "/rollout", Some(req.clone())).await;
    assert_eq!(status, StatusCode::OK);
    let (_, b) = call(&app, "POST", "/rollout", Some(req)).await;
    assert_eq!(a, b);
    let r: RolloutResponse = serde_json::from_slice(&a).unwrap();
    assert_eq!(r.generated, vec![0, 0, 0, 1, 2, 3, 4]);
    assert_eq!(r.strokes.len(), 7);
    assert_eq!(r.strokes[1], vec![[0.5, 0.25], [0.9, 0.25]]);
    let other = json!({ "strokes": drawn(), "steps": 4, "temperature": 0.8, "seed": 12 }).to_string();
    let (_, c) = call(&app, "POST", "/rollout", Some(other)).await;
    assert_ne!(a, c);
}

#[tokio::test]
async fn reload_swaps_weights() {
    let (app, _, dir) = app();
    let (_, before) = call(&app, "GET", "/health", None).await;
    let req = json!({ "strokes": drawn(), "steps": 2, "seed": 3 }).to_string();
    let (_, r1) = call(&app, "POST", "/rollout", Some(req.clone())).await;
    saved_checkpoint(dir.path(), 2);
    let (status, reloaded) = call(&app, "POST", "/reload", None).await;
    assert_eq!(status, StatusCode::OK);
    let (_, after) = call(&app, "GET", "/health", None).await;
    assert_eq!(json_of(&reloaded)["checkpoint_id"], json_of(&after)["checkpoint_id"]);
    assert_ne!(json_of(&before)["checkpoint_id"], json_of(&after)["checkpoint_id"]);
    let (_, r2) = call(&app, "POST", "/rollout", Some(req)).await;
    assert_ne!(r1, r2);
}

#[tokio::test]
async fn failed_reload_is_an_opaque_500() {
    let (app, _, dir) = app();
    std::fs::write(dir.path().join("checkpoint.json"), "{\"schema_version\": 1}").unwrap();
    let (status, bytes) = call(&app, "POST", "/reload", None).await;
    assert_eq!(status, StatusCode::INTERNAL_SERVER_ERROR);
    let v = json_of(&bytes);
    assert_eq!(v["error"], "internal error");
    assert!(uuid_like(v["id"].as_str().unwrap()));
    // The previous weights keep serving.
    let (status, _) = call(&app, "POST", "/suggest", Some(json!({ "strokes": drawn() }).to_string())).await;
    assert_eq!(status, StatusCode::OK);
}

fn uuid_like(s: &str) -> bool {
    s.len() == 36 && s.chars().filter(|&c| c == '-').count() == 4
}
