//! Endpoint behaviour through the router, without a socket.

use std::collections::BTreeSet;

use axum::body::{to_bytes, Body};
use axum::http::{Request, StatusCode};
use axum::Router;
use serde_json::{json, Value};
use tower::ServiceExt;

use provfig::demo::{demo_catalog, DemoSeeds};
use provfig::session::Workspace;
use provfig::testkit::fixed_time;
use provfig_server::{openapi, router, AppState, ROUTES};

fn state() -> AppState {
    let mut ws = Workspace::new(demo_catalog(DemoSeeds::default()).unwrap());
    ws.fixed_clock = Some(fixed_time());
    AppState::new(ws)
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Vec<u8>) {
    let req = Request::builder().method(method).uri(uri);
    let req = match body {
        Some(b) => req
            .header("content-type", "application/json")
            .body(Body::from(serde_json::to_vec(&b).unwrap())),
        None => req.body(Body::empty()),
    }
    .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    (status, to_bytes(resp.into_body(), usize::MAX).await.unwrap().to_vec())
}

async fn call_json(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let (s, b) = call(app, method, uri, body).await;
    (s, serde_json::from_slice(&b).unwrap_or(Value::Null))
}

async fn session(app: &Router) -> String {
    let (s, v) = call_json(app, "POST", "/api/v1/sessions", Some(json!({}))).await;
    assert_eq!(s, StatusCode::CREATED);
    v["session_id"].as_str().unwrap().to_string()
}

/// Data lines of a server-sent event stream, parsed.
fn sse_events(body: &[u8]) -> Vec<Value> {
    String::from_utf8_lossy(body)
        .lines()
        .filter_map(|l| l.strip_prefix("data: "))
        .map(|d| serde_json::from_str(d).unwrap())
        .collect()
}

const FLORIDA: &str = "plot mean temp by month for Florida as a line chart";

async fn florida(app: &Router, sid: &str) -> Value {
    let (s, v) = call_json(
        app,
        "POST",
        &format!("/api/v1/sessions/{sid}/messages?stream=false"),
        Some(json!({ "text": FLORIDA })),
    )
    .await;
    assert_eq!(s, StatusCode::OK, "{v}");
    v
}

fn ledger_fingerprint(st: &AppState) -> (usize, usize, Vec<(String, provfig::Digest)>) {
    let ws = st.workspace();
    (
        ws.history.ledger.versions.len(),
        ws.history.messages.len(),
        ws.history.ledger.snapshot_hashes().into_iter().collect(),
    )
}

#[tokio::test]
async fn sessions_are_created_and_fetched() {
    let app = router(state());
    let sid = session(&app).await;
    let (s, v) = call_json(&app, "GET", &format!("/api/v1/sessions/{sid}"), None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["backend"], "template");
    let (s, v) = call_json(&app, "POST", "/api/v1/sessions", Some(json!({ "backend": "oracle" }))).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert!(v["error"]["message"].as_str().unwrap().contains("oracle"));
    let (s, _) = call_json(&app, "GET", "/api/v1/sessions/s-nope", None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    let (s, _) = call(&app, "POST", "/api/v1/sessions", None).await;
    assert_eq!(s, StatusCode::CREATED);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn concurrent_creations_get_distinct_ids() {
    let app = router(state());
    let tasks: Vec<_> = (0..100)
        .map(|_| {
            let app = app.clone();
            tokio::spawn(async move { session(&app).await })
        })
        .collect();
    let mut ids = BTreeSet::new();
    for t in tasks {
        ids.insert(t.await.unwrap());
    }
    assert_eq!(ids.len(), 100);
}

#[tokio::test]
async fn a_message_streams_dense_events_ending_in_done() {
    let st = state();
    let app = router(st.clone());
    let sid = session(&app).await;
    let (s, body) = call(&app, "POST", &format!("/api/v1/sessions/{sid}/messages"), Some(json!({ "text": FLORIDA }))).await;
    assert_eq!(s, StatusCode::OK);
    let events = sse_events(&body);
    let seqs: Vec<u64> = events.iter().map(|e| e["seq"].as_u64().unwrap()).collect();
    assert_eq!(seqs, (0..events.len() as u64).collect::<Vec<_>>());
    let kinds: Vec<&str> = events.iter().map(|e| e["kind"].as_str().unwrap()).collect();
    assert_eq!(kinds.iter().filter(|k| ["done", "error"].contains(k)).count(), 1);
    assert_eq!(*kinds.last().unwrap(), "done");
    assert!(kinds.contains(&"action_selected") && kinds.contains(&"figure_ready"));
    let done = events.last().unwrap();
    let fid = done["figure_ids"][0].as_str().unwrap();
    assert!(done["links"][fid]["data"].as_str().unwrap().ends_with("file=data.csv"));
    assert_eq!(st.workspace().history.ledger.versions.len(), 1);
    assert!(st.busy_sessions().is_empty());
}

#[tokio::test]
async fn bad_messages_are_rejected_without_ledger_changes() {
    let st = state();
    let app = router(st.clone());
    let sid = session(&app).await;
    let fid = florida(&app, &sid).await["reply"]["figure_ids"][0].as_str().unwrap().to_string();
    let before = ledger_fingerprint(&st);
    let uri = format!("/api/v1/sessions/{sid}/messages");
    let brush = |lo: f64, hi: f64| json!({ "figure_id": fid, "type": "brush1d", "channel": "x", "lo": lo, "hi": hi, "at": fixed_time() });
    let (s, v) = call_json(&app, "POST", &uri, Some(json!({ "text": "rank state by mean temp", "interaction": brush(8.0, 6.0) }))).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY, "{v}");
    let (s, _) = call_json(&app, "POST", &uri, Some(json!({ "text": 5 }))).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    let (s, _) = call_json(&app, "POST", &uri, Some(json!({}))).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    let (s, _) = call_json(&app, "POST", "/api/v1/sessions/s-x/messages", Some(json!({ "text": "hi" }))).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    let gesture = json!({ "type": "brush1d", "channel": "x", "lo": 9.0, "hi": 1.0 });
    let (s, _) = call_json(&app, "POST", &format!("/api/v1/figures/{fid}/gestures"), Some(gesture.clone())).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    let (s, _) = call_json(&app, "POST", "/api/v1/figures/nope/gestures", Some(gesture)).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    assert_eq!(ledger_fingerprint(&st), before);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn overlapping_turns_conflict_and_abandoned_streams_commit_nothing() {
    let st = state().with_queue(1);
    let app = router(st.clone());
    let sid = session(&app).await;
    let before = ledger_fingerprint(&st);
    let uri = format!("/api/v1/sessions/{sid}/messages");
    let req = Request::post(&uri)
        .header("content-type", "application/json")
        .body(Body::from(json!({ "text": FLORIDA }).to_string()))
        .unwrap();
    // The loop blocks on the one-slot queue because nobody reads the body.
    let resp = app.clone().oneshot(req).await.unwrap();
    assert_eq!(resp.status(), StatusCode::OK);
    assert_eq!(st.busy_sessions(), vec![sid.clone()]);
    let (s, v) = call_json(&app, "POST", &uri, Some(json!({ "text": FLORIDA }))).await;
    assert_eq!(s, StatusCode::CONFLICT, "{v}");
    // Other sessions are not blocked.
    let other = session(&app).await;
    florida(&app, &other).await;
    drop(resp);
    for _ in 0..200 {
        if st.busy_sessions().is_empty() {
            break;
        }
        tokio::time::sleep(std::time::Duration::from_millis(10)).await;
    }
    assert!(st.busy_sessions().is_empty());
    let ws = st.workspace();
    let aid = ws.session_info(&sid).unwrap().artifact_id;
    assert_eq!(ws.history.ledger.head(&aid), None);
    assert_eq!(ws.history.messages_of(&sid).len(), 0);
    assert_eq!(ws.history.ledger.versions.len(), before.0 + 1);
}

#[tokio::test]
async fn gestures_echo_then_propagate_along_the_recorded_schema() {
    let st = state();
    let app = router(st.clone());
    let sid = session(&app).await;
    let fid = florida(&app, &sid).await["reply"]["figure_ids"][0].as_str().unwrap().to_string();
    let g = |lo: f64, hi: f64| json!({ "type": "brush1d", "channel": "x", "lo": lo, "hi": hi });
    let (s, echo) = call_json(&app, "POST", &format!("/api/v1/figures/{fid}/gestures"), Some(g(6.0, 8.0))).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(echo["selected_count"], 3);
    assert_eq!(echo["updates"], json!([]));
    let v = call_json(
        &app,
        "POST",
        &format!("/api/v1/sessions/{sid}/messages?stream=false"),
        Some(json!({
            "text": "rank state by mean temp",
            "interaction": { "figure_id": fid, "type": "brush1d", "channel": "x", "lo": 6.0, "hi": 8.0, "at": fixed_time() }
        })),
    )
    .await
    .1;
    let bar = v["reply"]["figure_ids"][0].as_str().unwrap().to_string();
    let (_, up) = call_json(&app, "POST", &format!("/api/v1/figures/{fid}/gestures"), Some(g(1.0, 3.0))).await;
    assert_eq!(up["updates"][0]["status"], "updated");
    assert_eq!(up["updates"][0]["figure_id"], bar.as_str());
    assert!(up["version_id"].is_string());
    let before = ledger_fingerprint(&st);
    let (_, empty) = call_json(&app, "POST", &format!("/api/v1/figures/{fid}/gestures"), Some(g(40.0, 50.0))).await;
    assert_ne!(empty["updates"][0]["status"], "updated");
    assert!(empty["version_id"].is_null());
    assert_eq!(ledger_fingerprint(&st), before);
}

#[tokio::test]
async fn figure_bundles_versions_replay_and_reads_are_pure() {
    let st = state();
    let app = router(st.clone());
    let sid = session(&app).await;
    let fid = florida(&app, &sid).await["reply"]["figure_ids"][0].as_str().unwrap().to_string();
    let before = ledger_fingerprint(&st);
    let uri = format!("/api/v1/figures/{fid}/bundle");
    let (s, a) = call(&app, "GET", &uri, None).await;
    assert_eq!(s, StatusCode::OK);
    let (_, b) = call(&app, "GET", &uri, None).await;
    assert_eq!(a, b);
    let files: Value = serde_json::from_slice(&a).unwrap();
    for f in ["chart.json", "vega_lite.json", "query.sql", "data.csv", "program.json", "meta.json"] {
        assert!(files["files"][f].is_string(), "{f}");
    }
    let (_, csv) = call(&app, "GET", &format!("{uri}?file=data.csv"), None).await;
    let meta: Value = serde_json::from_str(files["files"]["meta.json"].as_str().unwrap()).unwrap();
    let fig = st.workspace().locate_figure(&fid).unwrap().figure(&fid).unwrap().clone();
    let parsed = provfig::DataSlice::from_csv(fig.data.schema.clone(), fig.data.lineage.clone(), std::str::from_utf8(&csv).unwrap()).unwrap();
    assert_eq!(serde_json::to_value(parsed.digest).unwrap(), meta["digest"]);
    assert_eq!(call(&app, "GET", "/api/v1/figures/nope/bundle", None).await.0, StatusCode::NOT_FOUND);
    assert_eq!(call(&app, "GET", &format!("{uri}?file=secret"), None).await.0, StatusCode::NOT_FOUND);

    let aid = call_json(&app, "GET", &format!("/api/v1/sessions/{sid}"), None).await.1["artifact_id"]
        .as_str()
        .unwrap()
        .to_string();
    let (s, vs) = call_json(&app, "GET", &format!("/api/v1/artifacts/{aid}/versions"), None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(vs["versions"].as_array().unwrap().len(), 1);
    assert_eq!(vs["versions"][0]["figures"][0]["operation"], "generate");
    let (s, r) = call_json(&app, "POST", &format!("/api/v1/artifacts/{aid}/replay"), None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(r["ok"], true);
    let (s, _) = call_json(&app, "POST", &format!("/api/v1/artifacts/{aid}/replay"), Some(json!({ "version_id": "v-nope" }))).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    assert_eq!(call(&app, "GET", "/api/v1/artifacts/a-x/versions", None).await.0, StatusCode::NOT_FOUND);
    assert_eq!(call(&app, "GET", &format!("/api/v1/sessions/{sid}"), None).await.0, StatusCode::OK);
    assert_eq!(ledger_fingerprint(&st), before);
}

#[tokio::test]
async fn export_import_round_trip_and_tampering() {
    let app = router(state());
    let sid = session(&app).await;
    florida(&app, &sid).await;
    let aid = call_json(&app, "GET", &format!("/api/v1/sessions/{sid}"), None).await.1["artifact_id"]
        .as_str()
        .unwrap()
        .to_string();
    let (s, zip) = call(&app, "GET", &format!("/api/v1/artifacts/{aid}/export"), None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(call(&app, "GET", "/api/v1/artifacts/a-x/export", None).await.0, StatusCode::NOT_FOUND);

    let fresh = router(AppState::new(Workspace::default()));
    let import = |bytes: Vec<u8>| Request::post("/api/v1/artifacts/import").body(Body::from(bytes)).unwrap();
    let resp = fresh.clone().oneshot(import(zip.clone())).await.unwrap();
    assert_eq!(resp.status(), StatusCode::OK);
    let (s, r) = call_json(&fresh, "POST", &format!("/api/v1/artifacts/{aid}/replay"), None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(r["ok"], true);

    let bad = provfig::bundle::rewrite_entry(&zip, "catalog/temps.csv", |b| {
        let i = b.iter().rposition(|c| c.is_ascii_digit()).unwrap();
        b[i] = if b[i] == b'9' { b'0' } else { b[i] + 1 };
    })
    .unwrap();
    let other = router(AppState::new(Workspace::default()));
    assert_eq!(other.clone().oneshot(import(bad)).await.unwrap().status(), StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(other.clone().oneshot(import(b"junk".to_vec())).await.unwrap().status(), StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(other.oneshot(import(vec![])).await.unwrap().status(), StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn a_data_dir_survives_restarts() {
    let dir = tempfile::tempdir().unwrap();
    let st = state().with_data_dir(dir.path().to_path_buf());
    let app = router(st.clone());
    let sid = session(&app).await;
    florida(&app, &sid).await;
    let ws = Workspace::open(dir.path(), provfig::TableCatalog::new()).unwrap();
    assert_eq!(ws.history, st.workspace().history);
    let app = router(AppState::new(ws));
    let (s, v) = call_json(&app, "GET", &format!("/api/v1/sessions/{sid}"), None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["figure_ids"].as_array().unwrap().len(), 1);
}

#[tokio::test]
async fn openapi_is_committed_and_every_route_is_served() {
    let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("openapi.json");
    if std::env::var_os("UPDATE_OPENAPI").is_some() {
        std::fs::write(&path, serde_json::to_string_pretty(&openapi()).unwrap() + "\n").unwrap();
    }
    let committed: Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    assert_eq!(committed, openapi(), "regenerate with UPDATE_OPENAPI=1 cargo test -p provfig-server openapi");
    let app = router(state());
    let (s, v) = call_json(&app, "GET", "/api/v1/openapi.json", None).await;
    assert_eq!((s, v), (StatusCode::OK, openapi()));
    for r in ROUTES {
        let uri = r.path.replace("{id}", "zz");
        let (s, v) = call_json(&app, &r.method.to_uppercase(), &uri, None).await;
        assert_ne!(s, StatusCode::METHOD_NOT_ALLOWED, "{} {}", r.method, r.path);
        assert_ne!(v["error"]["message"], "not found: no such route", "{} {}", r.method, r.path);
    }
    let (s, _) = call_json(&app, "GET", "/api/v2/nothing", None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
}
