use std::time::{Duration, Instant};

use axum::body::Body;
use axum::http::{header, Method, Request, StatusCode};
use axum::Router;
use eda_explain::render::validate_report;
use eda_explain_service::{router, AppState, ServiceConfig};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

const SONGS: &str = "\
title,genre,decade,popularity,loudness
a,pop,1990s,70,-12
b,pop,2000s,40,-6
c,rock,1990s,80,-13
d,rock,2010s,30,-5
e,jazz,2000s,66,-7
f,jazz,2010s,20,-4
g,pop,2010s,90,-3
h,rock,1990s,50,-11
";

fn app(cfg: ServiceConfig) -> (AppState, Router) {
    let state = AppState::new(cfg);
    let r = router(state.clone()).unwrap();
    (state, r)
}

async fn send(app: &Router, req: Request<Body>) -> (StatusCode, Value) {
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let v = if bytes.is_empty() {
        Value::Null
    } else {
        serde_json::from_slice(&bytes).unwrap_or_else(|_| Value::String(String::from_utf8_lossy(&bytes).into()))
    };
    (status, v)
}

fn post_json(uri: &str, body: Value) -> Request<Body> {
    Request::post(uri)
        .header(header::CONTENT_TYPE, "application/json")
        .body(Body::from(body.to_string()))
        .unwrap()
}

fn multipart(uri: &str, name: Option<&str>, file_name: &str, csv: &str) -> Request<Body> {
    let b = "XBOUNDARYX";
    let mut body = String::new();
    if let Some(n) = name {
        body.push_str(&format!("--{b}\r\nContent-Disposition: form-data; name=\"name\"\r\n\r\n{n}\r\n"));
    }
    body.push_str(&format!(
        "--{b}\r\nContent-Disposition: form-data; name=\"file\"; filename=\"{file_name}\"\r\nContent-Type: text/csv\r\n\r\n{csv}\r\n--{b}--\r\n"
    ));
    Request::post(uri)
        .header(header::CONTENT_TYPE, format!("multipart/form-data; boundary={b}"))
        .body(Body::from(body))
        .unwrap()
}

async fn new_session(app: &Router) -> String {
    let (s, v) = send(app, Request::post("/sessions").body(Body::empty()).unwrap()).await;
    assert_eq!(s, StatusCode::CREATED);
    v["id"].as_str().unwrap().to_string()
}

async fn upload_songs(app: &Router, id: &str) {
    let (s, v) = send(app, multipart(&format!("/sessions/{id}/frames"), Some("songs"), "x.csv", SONGS)).await;
    assert_eq!(s, StatusCode::CREATED, "{v}");
}

fn step(op: Value, inputs: &[&str], output: &str) -> Value {
    json!({ "op": op, "inputs": inputs, "output": output })
}

#[tokio::test]
async fn healthz_is_open() {
    let (_, app) = app(ServiceConfig::default());
    let (s, v) = send(&app, Request::get("/healthz").body(Body::empty()).unwrap()).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["status"], "ok");
}

#[tokio::test]
async fn upload_returns_summary() {
    let (_, app) = app(ServiceConfig::default());
    let id = new_session(&app).await;
    let (s, v) = send(&app, multipart(&format!("/sessions/{id}/frames"), None, "songs.csv", SONGS)).await;
    assert_eq!(s, StatusCode::CREATED);
    assert_eq!(v["name"], "songs");
    assert_eq!(v["row_count"], 8);
    assert_eq!(v["columns"][3], json!({ "name": "popularity", "dtype": "numeric" }));
    assert_eq!(v["columns"][1]["dtype"], "categorical");
    assert_eq!(v["sample"][0], json!(["a", "pop", "1990s", 70.0, -12.0]));
}

#[tokio::test]
async fn filter_then_group_by_builds_history() {
    let (_, app) = app(ServiceConfig::default());
    let id = new_session(&app).await;
    upload_songs(&app, &id).await;

    let (s, v) = send(
        &app,
        post_json(&format!("/sessions/{id}/steps"), step(json!("FILTER popularity > 45"), &["songs"], "hits")),
    )
    .await;
    assert_eq!(s, StatusCode::OK, "{v}");
    assert_eq!(v["index"], 0);
    assert_eq!(v["output"]["row_count"], 5);
    validate_report(&v["report"]).unwrap();
    assert_eq!(v["report"]["step"]["inputs"], json!(["songs"]));

    let (s, v) = send(
        &app,
        post_json(
            &format!("/sessions/{id}/steps"),
            step(json!("GROUPBY decade AGG mean(loudness)"), &["hits"], "by_decade"),
        ),
    )
    .await;
    assert_eq!(s, StatusCode::OK, "{v}");
    validate_report(&v["report"]).unwrap();
    assert_eq!(v["report"]["step"]["inputs"], json!(["hits"]));

    let (s, h) = send(&app, Request::get(format!("/sessions/{id}/history")).body(Body::empty()).unwrap()).await;
    assert_eq!(s, StatusCode::OK);
    let steps = h["steps"].as_array().unwrap();
    assert_eq!(steps.len(), 2);
    assert_eq!(steps[0]["output"], "hits");
    assert_eq!(steps[1]["inputs"], json!(["hits"]));
    assert_eq!(steps[1]["op"], "GROUPBY decade AGG mean(loudness)");
    let names: Vec<&str> = h["frames"].as_array().unwrap().iter().map(|f| f["name"].as_str().unwrap()).collect();
    assert_eq!(names, ["by_decade", "hits", "songs"]);
}

#[tokio::test]
async fn result_sample_is_capped() {
    let mut csv = String::from("x,y\n");
    for i in 0..120 {
        csv.push_str(&format!("{i},{}\n", i % 3));
    }
    let (_, app) = app(ServiceConfig::default());
    let id = new_session(&app).await;
    let (s, _) = send(&app, multipart(&format!("/sessions/{id}/frames"), Some("t"), "t.csv", &csv)).await;
    assert_eq!(s, StatusCode::CREATED);
    let (s, v) = send(
        &app,
        post_json(&format!("/sessions/{id}/steps"), step(json!("FILTER x >= 10"), &["t"], "u")),
    )
    .await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["output"]["row_count"], 110);
    assert_eq!(v["output"]["sample"].as_array().unwrap().len(), 50);
    assert_eq!(v["output"]["sample"][0], json!([10.0, 1.0]));
}

#[tokio::test]
async fn json_operation_and_engine_config() {
    let (_, app) = app(ServiceConfig::default());
    let id = new_session(&app).await;
    upload_songs(&app, &id).await;
    let op = json!({ "op": "filter", "column": "popularity", "cmp": ">", "value": 45.0 });
    let body = json!({
        "op": op,
        "inputs": ["songs"],
        "output": "hits",
        "config": { "top_k": 1, "bins": [3], "many_to_one": false, "weights": [1.0, 2.0] }
    });
    let (s, v) = send(&app, post_json(&format!("/sessions/{id}/steps"), body)).await;
    assert_eq!(s, StatusCode::OK, "{v}");
    assert_eq!(v["report"]["step"]["op"], "FILTER popularity > 45");
    assert_eq!(v["report"]["explanations"].as_array().unwrap().len(), 1);
}

#[tokio::test]
async fn error_statuses() {
    let (_, app) = app(ServiceConfig::default());
    let id = new_session(&app).await;
    upload_songs(&app, &id).await;
    let url = format!("/sessions/{id}/steps");

    let (s, _) = send(&app, post_json("/sessions/nope/steps", step(json!("FILTER a > 1"), &["songs"], "o"))).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    let (s, _) = send(&app, Request::get("/sessions/nope/history").body(Body::empty()).unwrap()).await;
    assert_eq!(s, StatusCode::NOT_FOUND);

    let (s, v) = send(&app, post_json(&url, step(json!("FILTER popularity > 1"), &["missing"], "o"))).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    assert!(v["error"]["message"].as_str().unwrap().contains("missing"));

    let (s, v) = send(&app, post_json(&url, step(json!("FILTER"), &["songs"], "o"))).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert!(v["error"]["message"].as_str().unwrap().contains("syntax error"));

    let (s, v) = send(&app, post_json(&url, step(json!("FILTER genre > 3"), &["songs"], "o"))).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert!(v["error"]["message"].as_str().unwrap().contains("type mismatch"), "{v}");

    let (s, _) = send(&app, post_json(&url, step(json!("FILTER nope > 3"), &["songs"], "o"))).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);

    let mut bad = step(json!("FILTER popularity > 1"), &["songs"], "o");
    bad["config"] = json!({ "measure": "nonsense" });
    let (s, _) = send(&app, post_json(&url, bad)).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);

    let (s, _) = send(&app, post_json(&url, json!({ "op": "FILTER popularity > 1" }))).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);

    // Failed steps leave no trace.
    let (_, h) = send(&app, Request::get(format!("/sessions/{id}/history")).body(Body::empty()).unwrap()).await;
    assert_eq!(h["steps"].as_array().unwrap().len(), 0);
}

#[tokio::test]
async fn reusing_a_name_conflicts() {
    let (_, app) = app(ServiceConfig::default());
    let id = new_session(&app).await;
    upload_songs(&app, &id).await;
    let url = format!("/sessions/{id}/steps");
    let body = step(json!("FILTER popularity > 45"), &["songs"], "hits");
    assert_eq!(send(&app, post_json(&url, body.clone())).await.0, StatusCode::OK);
    assert_eq!(send(&app, post_json(&url, body)).await.0, StatusCode::CONFLICT);
    let (s, _) = send(&app, post_json(&url, step(json!("FILTER popularity > 1"), &["songs"], "songs"))).await;
    assert_eq!(s, StatusCode::CONFLICT);
    let (s, _) = send(&app, multipart(&format!("/sessions/{id}/frames"), Some("songs"), "s.csv", SONGS)).await;
    assert_eq!(s, StatusCode::CONFLICT);
}

#[tokio::test]
async fn oversized_upload_is_rejected() {
    let (_, app) = app(ServiceConfig {
        upload_cap: 256,
        ..ServiceConfig::default()
    });
    let id = new_session(&app).await;
    let mut csv = String::from("x\n");
    for i in 0..200 {
        csv.push_str(&format!("{i}\n"));
    }
    let (s, _) = send(&app, multipart(&format!("/sessions/{id}/frames"), Some("big"), "b.csv", &csv)).await;
    assert_eq!(s, StatusCode::PAYLOAD_TOO_LARGE);
}

#[tokio::test]
async fn bad_csv_is_a_client_error() {
    let (_, app) = app(ServiceConfig::default());
    let id = new_session(&app).await;
    let (s, _) = send(&app, multipart(&format!("/sessions/{id}/frames"), Some("e"), "e.csv", "a,b\n")).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    let (s, _) = send(&app, multipart(&format!("/sessions/{id}/frames"), Some("e"), "e.csv", "a,b\n1,2,3\n")).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn sessions_are_isolated() {
    let (_, app) = app(ServiceConfig::default());
    let a = new_session(&app).await;
    let b = new_session(&app).await;
    assert_ne!(a, b);
    upload_songs(&app, &a).await;
    let (s, _) = send(
        &app,
        post_json(&format!("/sessions/{b}/steps"), step(json!("FILTER popularity > 45"), &["songs"], "hits")),
    )
    .await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    // The same name is free in the other session.
    upload_songs(&app, &b).await;
}

#[tokio::test]
async fn bearer_token_guards_everything_but_health() {
    let (_, app) = app(ServiceConfig {
        bearer_token: Some("s3cret".into()),
        ..ServiceConfig::default()
    });
    let (s, _) = send(&app, Request::post("/sessions").body(Body::empty()).unwrap()).await;
    assert_eq!(s, StatusCode::UNAUTHORIZED);
    let wrong = Request::post("/sessions")
        .header(header::AUTHORIZATION, "Bearer nope")
        .body(Body::empty())
        .unwrap();
    assert_eq!(send(&app, wrong).await.0, StatusCode::UNAUTHORIZED);
    let ok = Request::post("/sessions")
        .header(header::AUTHORIZATION, "Bearer s3cret")
        .body(Body::empty())
        .unwrap();
    assert_eq!(send(&app, ok).await.0, StatusCode::CREATED);
    assert_eq!(
        send(&app, Request::get("/healthz").body(Body::empty()).unwrap()).await.0,
        StatusCode::OK
    );
}

#[tokio::test]
async fn cors_headers_for_ui_origin() {
    let (_, app) = app(ServiceConfig {
        cors_origin: Some("http://localhost:5173".into()),
        ..ServiceConfig::default()
    });
    let req = Request::builder()
        .method(Method::OPTIONS)
        .uri("/sessions")
        .header(header::ORIGIN, "http://localhost:5173")
        .header(header::ACCESS_CONTROL_REQUEST_METHOD, "POST")
        .body(Body::empty())
        .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    assert_eq!(
        resp.headers().get(header::ACCESS_CONTROL_ALLOW_ORIGIN).unwrap(),
        "http://localhost:5173"
    );
}

#[tokio::test]
async fn idle_sessions_are_evicted() {
    let (state, app) = app(ServiceConfig {
        ttl: Duration::from_millis(20),
        ..ServiceConfig::default()
    });
    let id = new_session(&app).await;
    assert_eq!(state.evict_expired(Instant::now()), 0);
    assert_eq!(state.evict_expired(Instant::now() + Duration::from_millis(50)), 1);
    let (s, _) = send(&app, Request::get(format!("/sessions/{id}/history")).body(Body::empty()).unwrap()).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn slow_step_answers_202_and_can_be_polled() {
    let (_, app) = app(ServiceConfig {
        step_timeout: Duration::ZERO,
        ..ServiceConfig::default()
    });
    let id = new_session(&app).await;
    let mut csv = String::from("a,b,c,d\n");
    for i in 0..40_000u64 {
        csv.push_str(&format!("{},{},k{},{}\n", i % 97, (i * 7) % 13, i % 11, (i * 31) % 1009));
    }
    let (s, _) = send(
        &app,
        Request::post(format!("/sessions/{id}/frames"))
            .header(header::CONTENT_TYPE, "multipart/form-data; boundary=XBOUNDARYX")
            .body(Body::from(format!(
                "--XBOUNDARYX\r\nContent-Disposition: form-data; name=\"file\"; filename=\"big.csv\"\r\n\r\n{csv}\r\n--XBOUNDARYX--\r\n"
            )))
            .unwrap(),
    )
    .await;
    assert_eq!(s, StatusCode::CREATED);
    let (s, v) = send(
        &app,
        post_json(&format!("/sessions/{id}/steps"), step(json!("FILTER a >= 50"), &["big"], "half")),
    )
    .await;
    assert_eq!(s, StatusCode::ACCEPTED, "{v}");
    let poll = v["poll"].as_str().unwrap().to_string();

    // A second step waits for the first: steps serialize per session.
    let (s2, v2) = send(
        &app,
        post_json(&format!("/sessions/{id}/steps"), step(json!("FILTER b > 3"), &["half"], "q")),
    )
    .await;
    assert!(s2 == StatusCode::ACCEPTED || s2 == StatusCode::OK, "{v2}");

    let deadline = Instant::now() + Duration::from_secs(60);
    let done = loop {
        let (s, v) = send(&app, Request::get(&poll).body(Body::empty()).unwrap()).await;
        if s == StatusCode::OK {
            break v;
        }
        assert_eq!(s, StatusCode::ACCEPTED);
        assert!(Instant::now() < deadline, "step never finished");
        tokio::time::sleep(Duration::from_millis(20)).await;
    };
    assert_eq!(done["output"]["name"], "half");
    validate_report(&done["report"]).unwrap();

    let deadline = Instant::now() + Duration::from_secs(60);
    loop {
        let (_, h) = send(&app, Request::get(format!("/sessions/{id}/history")).body(Body::empty()).unwrap()).await;
        let steps = h["steps"].as_array().unwrap();
        if steps.len() == 2 {
            assert_eq!(steps[0]["output"], "half");
            assert_eq!(steps[1]["output"], "q");
            break;
        }
        assert!(Instant::now() < deadline);
        tokio::time::sleep(Duration::from_millis(20)).await;
    }
    let (s, _) = send(&app, Request::get(format!("/sessions/{id}/steps/unknown")).body(Body::empty()).unwrap()).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn snapshot_round_trips_sessions() {
    let dir = tempfile::tempdir().unwrap();
    let (state, app) = app(ServiceConfig::default());
    let id = new_session(&app).await;
    upload_songs(&app, &id).await;
    let (s, _) = send(
        &app,
        post_json(&format!("/sessions/{id}/steps"), step(json!("FILTER popularity > 45"), &["songs"], "hits")),
    )
    .await;
    assert_eq!(s, StatusCode::OK);
    state.snapshot(dir.path()).await.unwrap();

    let (fresh, app2) = crate::app(ServiceConfig::default());
    assert_eq!(fresh.restore(dir.path()).unwrap(), 1);
    let (s, h) = send(&app2, Request::get(format!("/sessions/{id}/history")).body(Body::empty()).unwrap()).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(h["steps"][0]["output"], "hits");
    let (_, h1) = send(&app, Request::get(format!("/sessions/{id}/history")).body(Body::empty()).unwrap()).await;
    assert_eq!(h["frames"], h1["frames"]);
    let (s, v) = send(
        &app2,
        post_json(&format!("/sessions/{id}/steps"), step(json!("GROUPBY genre AGG count(title)"), &["hits"], "g")),
    )
    .await;
    assert_eq!(s, StatusCode::OK, "{v}");
}
