use std::sync::Arc;
use std::time::{Duration, Instant};

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use dba_core::data::synth_two_gaussians;
use dba_service::{router, AppState, ServiceConfig};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

fn state(dir: Option<&std::path::Path>) -> Arc<AppState> {
    let data = Arc::new(synth_two_gaussians(3, 300, 200, 3.0, 11).unwrap());
    let config = ServiceConfig {
        transcript_dir: dir.map(|d| d.to_path_buf()),
        session_ttl: Duration::from_secs(60),
        ..Default::default()
    };
    AppState::new(data, config).unwrap()
}

async fn send(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Vec<u8>) {
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json")
        .body(match body {
            Some(b) => Body::from(b.to_string()),
            None => Body::empty(),
        })
        .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes().to_vec();
    (status, bytes)
}

async fn send_json(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let (status, bytes) = send(app, method, uri, body).await;
    let value: Value = serde_json::from_slice(&bytes).unwrap_or_else(|_| panic!("non-JSON body from {uri}"));
    assert_eq!(value["v"], 1, "missing schema version from {uri}: {value}");
    (status, value)
}

async fn create(app: &Router, config: Value) -> String {
    let (status, body) = send_json(app, "POST", "/sessions", Some(config)).await;
    assert_eq!(status, StatusCode::CREATED, "{body}");
    body["session_id"].as_str().unwrap().to_string()
}

async fn query(app: &Router, id: &str) -> Value {
    let (status, body) = send_json(app, "GET", &format!("/sessions/{id}/query"), None).await;
    assert_eq!(status, StatusCode::OK, "{body}");
    body
}

async fn annotate(app: &Router, id: &str, body: Value) -> (StatusCode, Value) {
    send_json(app, "POST", &format!("/sessions/{id}/annotation"), Some(body)).await
}

async fn state_of(app: &Router, id: &str) -> Value {
    send_json(app, "GET", &format!("/sessions/{id}/state"), None).await.1
}

// Clicks in the middle of the strip: always in range, and a boundary point.
async fn click_middle(app: &Router, id: &str) -> Value {
    let q = query(app, id).await;
    let line = &q["line"];
    let count = line["sample_count"].as_u64().unwrap();
    let body = if line["has_line"].as_bool().unwrap() {
        json!({"line_id": line["line_id"], "index": count / 2, "label": 1})
    } else {
        json!({"line_id": line["line_id"], "no_change": true, "label": 1})
    };
    let (status, resp) = annotate(app, id, body).await;
    assert_eq!(status, StatusCode::OK, "{resp}");
    resp
}

#[tokio::test]
async fn protocol_walk() {
    let app = router(state(None));
    let id = create(&app, json!({"seed": 4})).await;
    let (_, curve) = send_json(&app, "GET", &format!("/sessions/{id}/curve"), None).await;
    assert_eq!(curve["accuracies"].as_array().unwrap().len(), 1);

    let q = query(&app, &id).await;
    assert_eq!(q["finished"], false);
    let line = &q["line"];
    let count = line["sample_count"].as_u64().unwrap() as usize;
    let zones = line["zones"].as_array().unwrap();
    assert_eq!(zones.len(), count);
    // Click zones tile the strip: no gaps, no overlap.
    assert_eq!(zones[0]["x_start"], 0);
    assert_eq!(zones[count - 1]["x_end"], line["strip_width"]);
    for pair in zones.windows(2) {
        assert_eq!(pair[0]["x_end"], pair[1]["x_start"]);
    }
    assert_eq!(line["t_values"].as_array().unwrap().len(), count);
    assert_eq!(line["strip_width"].as_u64().unwrap() as usize, count * 32 + (count - 1) * 2);

    let (status, png_bytes) = send(&app, "GET", line["strip_url"].as_str().unwrap(), None).await;
    assert_eq!(status, StatusCode::OK);
    let reader = png::Decoder::new(std::io::Cursor::new(png_bytes)).read_info().unwrap();
    assert_eq!(reader.info().width as u64, line["strip_width"].as_u64().unwrap());

    // Asking again does not issue a new line.
    assert_eq!(query(&app, &id).await["line"]["line_id"], line["line_id"]);

    let (status, resp) = annotate(&app, &id, json!({"line_id": line["line_id"], "index": 3.min(count - 1), "label": -1})).await;
    assert_eq!(status, StatusCode::OK, "{resp}");
    assert_eq!(resp["iteration"], 1);
    assert_eq!(resp["labeled"], 3);
    let (_, curve) = send_json(&app, "GET", &format!("/sessions/{id}/curve"), None).await;
    assert_eq!(curve["accuracies"].as_array().unwrap().len(), 2);
    assert_eq!(curve["accuracies"][1], resp["accuracy"]);
}

#[tokio::test]
async fn no_change_adds_only_a_label() {
    let app = router(state(None));
    let id = create(&app, json!({})).await;
    click_middle(&app, &id).await;
    let before = state_of(&app, &id).await;
    let q = query(&app, &id).await;
    let (status, _) = annotate(&app, &id, json!({"line_id": q["line"]["line_id"], "no_change": true, "label": 1})).await;
    assert_eq!(status, StatusCode::OK);
    let after = state_of(&app, &id).await;
    assert_eq!(after["boundary_points"], before["boundary_points"]);
    assert_eq!(after["labeled"].as_u64().unwrap(), before["labeled"].as_u64().unwrap() + 1);
}

#[tokio::test]
async fn duplicate_submission_applies_once() {
    let app = router(state(None));
    let id = create(&app, json!({})).await;
    let q = query(&app, &id).await;
    let body = json!({"line_id": q["line"]["line_id"], "index": 0, "label": 1});
    let (s1, r1) = annotate(&app, &id, body.clone()).await;
    let (s2, r2) = annotate(&app, &id, body).await;
    assert_eq!((s1, s2), (StatusCode::OK, StatusCode::OK));
    assert_eq!(r1, r2);
    assert_eq!(state_of(&app, &id).await["iteration"], 1);
    // A different answer for the same line is refused.
    let (s3, _) = annotate(&app, &id, json!({"line_id": q["line"]["line_id"], "index": 0, "label": -1})).await;
    assert_eq!(s3, StatusCode::CONFLICT);
}

#[tokio::test]
async fn error_statuses() {
    let app = router(state(None));
    let id = create(&app, json!({})).await;

    let (s, _) = annotate(&app, &id, json!({"line_id": 0, "index": 0, "label": 1})).await;
    assert_eq!(s, StatusCode::CONFLICT, "no pending line yet");

    let q = query(&app, &id).await;
    let line_id = q["line"]["line_id"].as_u64().unwrap();
    let count = q["line"]["sample_count"].as_u64().unwrap();
    let (s, _) = annotate(&app, &id, json!({"line_id": line_id + 7, "index": 0, "label": 1})).await;
    assert_eq!(s, StatusCode::CONFLICT, "stale line");
    let (s, _) = annotate(&app, &id, json!({"line_id": line_id, "index": count, "label": 1})).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY, "out of range");
    let (s, _) = annotate(&app, &id, json!({"line_id": line_id, "index": 0, "label": 0})).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY, "bad label");
    let (s, _) = annotate(&app, &id, json!({"line_id": line_id, "index": 0, "no_change": true, "label": 1})).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY, "both answers");
    let (s, _) = annotate(&app, &id, json!({"line_id": line_id, "label": 1})).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY, "no answer");
    let (s, _) = annotate(&app, &id, json!({"line_id": line_id, "index": 0, "label": 1, "extra": 1})).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY, "unknown field");
    assert_eq!(state_of(&app, &id).await["iteration"], 0);

    let ghost = "0123456789abcdef0123456789abcdef";
    for uri in [
        format!("/sessions/{ghost}/query"),
        format!("/sessions/{ghost}/curve"),
        "/sessions/not-a-session/curve".to_string(),
        format!("/sessions/{id}/strip/999.png"),
        format!("/sessions/{id}/strip/abc"),
    ] {
        let (s, _) = send_json(&app, "GET", &uri, None).await;
        assert_eq!(s, StatusCode::NOT_FOUND, "{uri}");
    }
    let (s, _) = send_json(&app, "POST", "/sessions", Some(json!({"n_queries": 0}))).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    let (s, _) = send_json(&app, "POST", "/sessions", Some(json!({"strategy": "qbc"}))).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
}

#[tokio::test]
async fn sample_mode_takes_labels_only() {
    let app = router(state(None));
    let id = create(&app, json!({"annotation_mode": "sample"})).await;
    let q = query(&app, &id).await;
    assert_eq!(q["line"]["has_line"], false);
    assert_eq!(q["line"]["sample_count"], 1);
    let line_id = q["line"]["line_id"].clone();
    let (s, _) = annotate(&app, &id, json!({"line_id": line_id, "index": 0, "label": 1})).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    let (s, _) = annotate(&app, &id, json!({"line_id": line_id, "no_change": true, "label": 1})).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(state_of(&app, &id).await["boundary_points"], 0);
}

#[tokio::test]
async fn budget_ends_session() {
    let app = router(state(None));
    let id = create(&app, json!({"n_queries": 2})).await;
    click_middle(&app, &id).await;
    let last = click_middle(&app, &id).await;
    assert_eq!(last["finished"], true);
    let q = query(&app, &id).await;
    assert_eq!(q["finished"], true);
    assert!(q.get("line").is_none());
    let (s, _) = annotate(&app, &id, json!({"line_id": 2, "no_change": true, "label": 1})).await;
    assert_eq!(s, StatusCode::CONFLICT);
}

#[tokio::test]
async fn restart_recovers_sessions_by_replay() {
    let dir = tempfile::tempdir().unwrap();
    let (id, curve, pending) = {
        let app = router(state(Some(dir.path())));
        let id = create(&app, json!({"strategy": "random", "seed": 3})).await;
        for _ in 0..4 {
            click_middle(&app, &id).await;
        }
        let pending = query(&app, &id).await;
        let curve = send_json(&app, "GET", &format!("/sessions/{id}/curve"), None).await.1;
        (id, curve, pending)
    };
    // Simulate a crash mid-append.
    let path = dir.path().join(format!("{id}.jsonl"));
    let mut text = std::fs::read_to_string(&path).unwrap();
    assert_eq!(text.lines().count(), 5);
    text.push_str("{\"type\":\"step\",\"itera");
    std::fs::write(&path, text).unwrap();

    let st = state(Some(dir.path()));
    let (restored, failed) = st.recover_all();
    assert_eq!(restored, vec![id.clone()]);
    assert!(failed.is_empty(), "{failed:?}");
    let app = router(st);
    assert_eq!(send_json(&app, "GET", &format!("/sessions/{id}/curve"), None).await.1, curve);
    // The same line is issued again.
    assert_eq!(query(&app, &id).await, pending);
    click_middle(&app, &id).await;
    assert_eq!(std::fs::read_to_string(&path).unwrap().lines().count(), 6);
}

#[tokio::test]
async fn idle_sessions_are_evicted_and_reloaded() {
    let dir = tempfile::tempdir().unwrap();
    let st = state(Some(dir.path()));
    let app = router(st.clone());
    let id = create(&app, json!({})).await;
    click_middle(&app, &id).await;
    assert_eq!(st.evict_idle(Instant::now()), 0);
    assert_eq!(st.evict_idle(Instant::now() + Duration::from_secs(120)), 1);
    assert_eq!(st.live_sessions(), 0);
    assert_eq!(state_of(&app, &id).await["iteration"], 1);
    assert_eq!(st.live_sessions(), 1);

    // Without persistence an evicted session is gone.
    let st = state(None);
    let app = router(st.clone());
    let id = create(&app, json!({})).await;
    st.evict_idle(Instant::now() + Duration::from_secs(120));
    let (s, _) = send_json(&app, "GET", &format!("/sessions/{id}/state"), None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn concurrent_requests_keep_the_cycle_intact() {
    let dir = tempfile::tempdir().unwrap();
    let app = router(state(Some(dir.path())));
    let id = create(&app, json!({"n_queries": 40, "seed": 9})).await;
    let mut tasks = Vec::new();
    for worker in 0..8u64 {
        let app = app.clone();
        let id = id.clone();
        tasks.push(tokio::spawn(async move {
            for round in 0..12u64 {
                let (_, q) = send_json(&app, "GET", &format!("/sessions/{id}/query"), None).await;
                if q["finished"] == true {
                    break;
                }
                let line = &q["line"];
                let count = line["sample_count"].as_u64().unwrap();
                let body = match (worker + round) % 3 {
                    0 if line["has_line"] == true => json!({"line_id": line["line_id"], "index": (worker * 7 + round) % count, "label": 1}),
                    1 => json!({"line_id": line["line_id"], "no_change": true, "label": -1}),
                    _ => json!({"line_id": line["line_id"], "no_change": true, "label": 1}),
                };
                let (status, resp) = send_json(&app, "POST", &format!("/sessions/{id}/annotation"), Some(body)).await;
                assert!(
                    status == StatusCode::OK || status == StatusCode::CONFLICT,
                    "unexpected {status}: {resp}"
                );
                let _ = send_json(&app, "GET", &format!("/sessions/{id}/curve"), None).await;
            }
        }));
    }
    for t in tasks {
        t.await.unwrap();
    }
    let s = state_of(&app, &id).await;
    let iteration = s["iteration"].as_u64().unwrap();
    assert!(iteration > 0);
    assert_eq!(s["labeled"].as_u64().unwrap(), 2 + iteration);
    let (_, curve) = send_json(&app, "GET", &format!("/sessions/{id}/curve"), None).await;
    assert_eq!(curve["accuracies"].as_array().unwrap().len() as u64, iteration + 1);
    let text = std::fs::read_to_string(dir.path().join(format!("{id}.jsonl"))).unwrap();
    assert_eq!(text.lines().count() as u64, 1 + iteration);
}
