use std::path::Path;
use std::sync::Arc;

use axum::body::{to_bytes, Body};
use axum::http::{header, Method, Request, StatusCode};
use axum::Router;
use idclean_core::outlier::build_report;
use idclean_core::reporting::RocOptions;
use idclean_core::scoring::score_all;
use idclean_core::synth::{planted_noise, PlantedNoiseConfig};
use idclean_core::{
    DatasetManifest, EmbeddingMatrix, FlagSelection, IdentityScore, ReportOptions, SampleRecord,
};
use idclean_service::{router, OutputPaths, ReviewSession, TOKEN_HEADER};
use serde_json::{json, Value};
use tempfile::TempDir;
use tower::ServiceExt;

struct Fixture {
    dir: TempDir,
    manifest: DatasetManifest,
    embeddings: EmbeddingMatrix,
    scores: Vec<IdentityScore>,
    options: ReportOptions,
}

impl Fixture {
    fn log_path(&self) -> std::path::PathBuf {
        self.dir.path().join("verdicts.jsonl")
    }

    fn session(&self) -> ReviewSession {
        let report = build_report(&self.scores, &self.manifest, &self.embeddings, &self.options).unwrap();
        ReviewSession::new(report, self.manifest.clone(), &self.log_path(), OutputPaths::in_dir(self.dir.path()))
            .unwrap()
    }

    fn app(&self) -> (Arc<ReviewSession>, Router) {
        let s = Arc::new(self.session());
        (s.clone(), router(s, None))
    }

    fn log_lines(&self) -> usize {
        std::fs::read_to_string(self.log_path()).map(|t| t.lines().count()).unwrap_or(0)
    }
}

/// 100 identities, three contaminated; the default 3% flags exactly those.
fn planted() -> Fixture {
    let data = planted_noise(&PlantedNoiseConfig::default());
    let scores = score_all(&data.manifest, &data.embeddings);
    Fixture {
        dir: tempfile::tempdir().unwrap(),
        manifest: data.manifest,
        embeddings: data.embeddings,
        scores,
        options: ReportOptions::default(),
    }
}

/// `odd` has three tight samples plus `odd_x` far away, so its three pairs
/// with `odd_x` exceed the threshold and the queue is `[odd_x]`. `wide` is
/// flagged second but no pair crosses the threshold.
fn handmade() -> Fixture {
    let groups: &[(&str, &[[f32; 2]])] = &[
        ("odd", &[[0.0, 0.0], [0.5, 0.0], [0.0, 0.5], [10.0, 0.0]]),
        ("wide", &[[0.0, 0.0], [3.0, 0.0], [0.0, 3.0]]),
        ("tight", &[[0.0, 0.0], [0.1, 0.0], [0.0, 0.1]]),
    ];
    let mut samples = Vec::new();
    let mut rows = Vec::new();
    for (id, pts) in groups {
        for (k, p) in pts.iter().enumerate() {
            let sid = if *id == "odd" && k == 3 { "odd_x".to_string() } else { format!("{id}_{k}") };
            samples.push(SampleRecord {
                sample_id: sid.clone(),
                identity_id: id.to_string(),
                image_path: format!("{id}/{sid}.png"),
                row: rows.len(),
            });
            rows.push(p.to_vec());
        }
    }
    let manifest = DatasetManifest::from_samples(samples).unwrap();
    let embeddings = EmbeddingMatrix::from_rows(2, rows).unwrap();
    let scores = score_all(&manifest, &embeddings);
    Fixture {
        dir: tempfile::tempdir().unwrap(),
        manifest,
        embeddings,
        scores,
        options: ReportOptions {
            selection: FlagSelection::Count(2),
            pair_threshold: Some(5.0),
            ..ReportOptions::default()
        },
    }
}

async fn send(app: &Router, method: Method, uri: &str, body: Option<Value>) -> (StatusCode, Vec<u8>) {
    let mut req = Request::builder().method(method).uri(uri);
    let body = match body {
        Some(v) => {
            req = req.header(header::CONTENT_TYPE, "application/json");
            Body::from(v.to_string())
        }
        None => Body::empty(),
    };
    let resp = app.clone().oneshot(req.body(body).unwrap()).await.unwrap();
    let status = resp.status();
    (status, to_bytes(resp.into_body(), usize::MAX).await.unwrap().to_vec())
}

async fn get_json(app: &Router, uri: &str) -> (StatusCode, Value) {
    let (status, bytes) = send(app, Method::GET, uri, None).await;
    (status, serde_json::from_slice(&bytes).unwrap())
}

async fn post_json(app: &Router, uri: &str, body: Value) -> (StatusCode, Value) {
    let (status, bytes) = send(app, Method::POST, uri, Some(body)).await;
    (status, serde_json::from_slice(&bytes).unwrap())
}

#[tokio::test]
async fn queue_lists_flagged_identities_with_status() {
    let fx = planted();
    let (session, app) = fx.app();
    let (status, body) = get_json(&app, "/api/queue").await;
    assert_eq!(status, StatusCode::OK);
    let list = body.as_array().unwrap();
    assert_eq!(list.len(), 3);
    for (entry, flagged) in list.iter().zip(&session.report().identities) {
        assert_eq!(entry["identity_id"], flagged.identity_id);
        assert_eq!(entry["id_score"].as_f64().unwrap(), flagged.id_score);
        assert_eq!(entry["queue_length"], flagged.review_queue.len());
        assert_eq!(entry["status"], "pending");
    }
}

#[tokio::test]
async fn verdict_marks_identity_done_and_grows_log() {
    let fx = planted();
    let (session, app) = fx.app();
    let target = session.report().identities[0].clone();
    let removed = target.review_queue.clone();
    assert!(!removed.is_empty());
    let (status, body) = post_json(
        &app,
        "/api/verdict",
        json!({"identity_id": target.identity_id, "mislabel_type": "TYPE_A",
               "removed_samples": removed, "reviewer": "rv"}),
    )
    .await;
    assert_eq!(status, StatusCode::OK, "{body}");
    assert_eq!(body["ok"], true);
    assert_eq!(body["effective_verdict"]["mislabel_type"], "TYPE_A");
    assert_eq!(fx.log_lines(), 1);

    let (_, queue) = get_json(&app, "/api/queue").await;
    assert_eq!(queue[0]["status"], "done");
    assert_eq!(queue[1]["status"], "pending");
    let (_, progress) = get_json(&app, "/api/progress").await;
    assert_eq!(progress["done"], 1);
    assert_eq!(progress["pending"], 2);
    assert_eq!(progress["totals"]["flagged"], 3);
    assert_eq!(progress["totals"]["verdicts_recorded"], 1);

    // A later verdict supersedes the first.
    let (status, _) = post_json(
        &app,
        "/api/verdict",
        json!({"identity_id": target.identity_id, "mislabel_type": "HIGH_VARIATION", "reviewer": "rv"}),
    )
    .await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(fx.log_lines(), 2);
    let (_, detail) = get_json(&app, &format!("/api/identity/{}", target.identity_id)).await;
    assert_eq!(detail["effective_verdict"]["mislabel_type"], "HIGH_VARIATION");
    let (_, progress) = get_json(&app, "/api/progress").await;
    assert_eq!(progress["done"], 1);
    assert_eq!(progress["totals"]["verdicts_recorded"], 2);

    // The log survives a restart.
    drop(app);
    drop(session);
    let reopened = fx.session();
    let log = reopened.verdict_log();
    assert_eq!(log.len(), 2);
    assert_eq!(log.effective(&target.identity_id).unwrap().mislabel_type.as_str(), "HIGH_VARIATION");
}

#[tokio::test]
async fn verdict_for_unknown_identity_is_404_and_log_unchanged() {
    let fx = planted();
    let (_, app) = fx.app();
    let (status, body) = post_json(
        &app,
        "/api/verdict",
        json!({"identity_id": "nobody", "mislabel_type": "TYPE_B", "reviewer": "rv"}),
    )
    .await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert!(body["error"].as_str().unwrap().contains("nobody"));
    assert_eq!(fx.log_lines(), 0);
}

#[tokio::test]
async fn malformed_verdicts_are_rejected() {
    let fx = planted();
    let (session, app) = fx.app();
    let id = session.report().identities[0].identity_id.clone();
    let other_sample = session
        .manifest()
        .samples()
        .iter()
        .find(|s| s.identity_id != id)
        .unwrap()
        .sample_id
        .clone();
    let own_sample = session.manifest().samples()[session.manifest().positions(&id).unwrap()[0]].sample_id.clone();
    let cases = [
        json!({"identity_id": id, "mislabel_type": "HIGH_VARIATION", "removed_samples": [own_sample], "reviewer": "rv"}),
        json!({"identity_id": id, "mislabel_type": "TYPE_A", "removed_samples": [], "reviewer": "rv"}),
        json!({"identity_id": id, "mislabel_type": "TYPE_C", "removed_samples": [other_sample], "reviewer": "rv"}),
        json!({"identity_id": id, "mislabel_type": "TYPE_Z", "reviewer": "rv"}),
        json!({"identity_id": id, "mislabel_type": "TYPE_B", "reviewer": ""}),
        json!({"identity_id": id}),
    ];
    for body in cases {
        let (status, resp) = post_json(&app, "/api/verdict", body.clone()).await;
        assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY, "{body} -> {resp}");
        assert!(resp["error"].is_string());
    }
    assert_eq!(fx.log_lines(), 0);
}

#[tokio::test]
async fn identity_detail_highlights_queue_and_sorts_pairs() {
    let fx = handmade();
    let (_, app) = fx.app();
    let (status, d) = get_json(&app, "/api/identity/odd").await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(d["review_queue"], json!(["odd_x"]));
    assert_eq!(d["nop"], 3);
    assert_eq!(d["no_specific_pair"], false);
    assert_eq!(d["status"], "pending");
    let pairs = d["flagged_pairs"].as_array().unwrap();
    assert_eq!(pairs.len(), 3);
    let dists: Vec<f64> = pairs.iter().map(|p| p["distance"].as_f64().unwrap()).collect();
    assert!(dists.windows(2).all(|w| w[0] >= w[1]), "{dists:?}");
    assert_eq!(dists[0], 100.25f64.sqrt());
    assert!(pairs.iter().all(|p| p["a"] == "odd_x" || p["b"] == "odd_x"));
    let samples = d["samples"].as_array().unwrap();
    assert_eq!(samples.len(), 4);
    for s in samples {
        let sid = s["sample_id"].as_str().unwrap();
        assert_eq!(s["in_queue"], sid == "odd_x");
        assert_eq!(s["image_url"], format!("/img/{sid}"));
    }
    let x = samples.iter().find(|s| s["sample_id"] == "odd_x").unwrap();
    assert_eq!(x["frequency"], 3);
    assert_eq!(x["queue_rank"], 0);
}

#[tokio::test]
async fn identity_detail_empty_queue_and_unknown() {
    let fx = handmade();
    let (_, app) = fx.app();
    let (status, d) = get_json(&app, "/api/identity/wide").await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(d["no_specific_pair"], true);
    assert_eq!(d["flagged_pairs"], json!([]));
    assert_eq!(d["review_queue"], json!([]));
    assert_eq!(d["samples"].as_array().unwrap().len(), 3);

    // Present in the manifest but not flagged.
    let (status, body) = get_json(&app, "/api/identity/tight").await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert!(body["error"].is_string());
    let (status, _) = get_json(&app, "/api/identity/ghost").await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn apply_without_verdicts_fails_and_writes_nothing() {
    let fx = planted();
    let (session, app) = fx.app();
    let (status, body) = post_json(&app, "/api/apply", json!({"min_remaining": 3})).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert!(body["error"].as_str().unwrap().contains("no verdicts"));
    assert!(!session.outputs().manifest.exists());
    assert!(!session.outputs().removals.exists());
}

#[tokio::test]
async fn apply_high_variation_only_keeps_manifest() {
    let fx = planted();
    let (session, app) = fx.app();
    let id = session.report().identities[0].identity_id.clone();
    let (status, _) = post_json(
        &app,
        "/api/verdict",
        json!({"identity_id": id, "mislabel_type": "HIGH_VARIATION", "reviewer": "rv"}),
    )
    .await;
    assert_eq!(status, StatusCode::OK);
    let (status, census) = post_json(&app, "/api/apply", json!({"min_remaining": 3})).await;
    assert_eq!(status, StatusCode::OK, "{census}");
    assert_eq!(census["samples_removed"], 0);
    assert_eq!(census["false_alarms"], 1);
    assert_eq!(census["flagged"], 3);
    let cleaned = DatasetManifest::load(&session.outputs().manifest).unwrap();
    assert_eq!(cleaned, fx.manifest);
    let removals = std::fs::read_to_string(&session.outputs().removals).unwrap();
    let mut lines = removals.lines();
    assert!(lines.next().unwrap().starts_with("# provenance: "));
    assert_eq!(lines.next().unwrap(), "sample_id,identity_id,action,mislabel_type");
    assert_eq!(lines.next(), None);
    let sidecar = session.outputs().manifest.with_file_name("cleaned_manifest.csv.provenance.json");
    let prov: Value = serde_json::from_str(&std::fs::read_to_string(sidecar).unwrap()).unwrap();
    assert_eq!(prov["stage"], "apply");
    assert_eq!(prov["parameters"]["min_remaining"], 3);
    assert_eq!(prov["inputs"]["verdicts"]["sha256"].as_str().unwrap().len(), 64);
}

#[tokio::test]
async fn apply_type_b_removes_folder() {
    let fx = planted();
    let (session, app) = fx.app();
    let id = session.report().identities[1].identity_id.clone();
    let folder: Vec<String> = session
        .manifest()
        .positions(&id)
        .unwrap()
        .iter()
        .map(|&p| session.manifest().samples()[p].sample_id.clone())
        .collect();
    let (status, _) =
        post_json(&app, "/api/verdict", json!({"identity_id": id, "mislabel_type": "TYPE_B", "reviewer": "rv"})).await;
    assert_eq!(status, StatusCode::OK);
    let (status, census) = post_json(&app, "/api/apply", json!({})).await;
    assert_eq!(status, StatusCode::OK, "{census}");
    assert_eq!(census["identities_removed"], 1);
    assert_eq!(census["folders_removed"], 1);
    assert_eq!(census["samples_removed"], folder.len());
    let text = std::fs::read_to_string(&session.outputs().removals).unwrap();
    let rows: Vec<&str> = text.lines().skip(2).collect();
    assert_eq!(rows.len(), folder.len());
    for (row, sid) in rows.iter().zip(&folder) {
        assert_eq!(*row, format!("{sid},{id},REMOVE_IDENTITY,TYPE_B"));
    }
    let cleaned = DatasetManifest::load(&session.outputs().manifest).unwrap();
    assert!(!cleaned.contains_identity(&id));
    assert_eq!(cleaned.identity_count(), 99);
}

#[tokio::test]
async fn apply_is_single_flight() {
    let fx = planted();
    let (session, app) = fx.app();
    let id = session.report().identities[0].identity_id.clone();
    post_json(&app, "/api/verdict", json!({"identity_id": id, "mislabel_type": "TYPE_B", "reviewer": "rv"})).await;
    let guard = session.try_begin_apply().unwrap();
    let (status, body) = post_json(&app, "/api/apply", json!({"min_remaining": 3})).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert!(body["error"].as_str().unwrap().contains("in progress"));
    assert!(!session.outputs().manifest.exists());
    drop(guard);
    let (status, _) = post_json(&app, "/api/apply", json!({"min_remaining": 3})).await;
    assert_eq!(status, StatusCode::OK);
}

#[tokio::test]
async fn apply_rejects_zero_min_remaining() {
    let fx = planted();
    let (_, app) = fx.app();
    let (status, _) = post_json(&app, "/api/apply", json!({"min_remaining": 0})).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
}

fn write_image(root: &Path, rel: &str, bytes: &[u8]) {
    let p = root.join(rel);
    std::fs::create_dir_all(p.parent().unwrap()).unwrap();
    std::fs::write(p, bytes).unwrap();
}

#[tokio::test]
async fn images_are_served_or_replaced_by_placeholder() {
    let mut fx = handmade();
    let root = fx.dir.path().join("images");
    write_image(&root, "odd/odd_0.png", b"\x89PNG fake");
    std::fs::write(fx.dir.path().join("secret.png"), b"top secret").unwrap();
    let mut samples = fx.manifest.samples().to_vec();
    let escape = samples.iter_mut().find(|s| s.sample_id == "odd_1").unwrap();
    escape.image_path = "../secret.png".into();
    fx.manifest = DatasetManifest::from_samples(samples).unwrap();
    let session = Arc::new(fx.session().with_image_root(&root));
    let app = router(session, None);

    let resp = app.clone().oneshot(Request::get("/img/odd_0").body(Body::empty()).unwrap()).await.unwrap();
    assert_eq!(resp.status(), StatusCode::OK);
    assert_eq!(resp.headers()[header::CONTENT_TYPE], "image/png");
    assert_eq!(to_bytes(resp.into_body(), usize::MAX).await.unwrap().as_ref(), b"\x89PNG fake");

    let resp = app.clone().oneshot(Request::get("/img/odd_2").body(Body::empty()).unwrap()).await.unwrap();
    assert_eq!(resp.status(), StatusCode::OK);
    assert_eq!(resp.headers()[header::CONTENT_TYPE], "image/svg+xml");
    assert_eq!(resp.headers()["x-idclean-placeholder"], "1");
    let svg = to_bytes(resp.into_body(), usize::MAX).await.unwrap();
    assert!(std::str::from_utf8(&svg).unwrap().contains("odd_2"));

    let (status, body) = send(&app, Method::GET, "/img/odd_1", None).await;
    assert_eq!(status, StatusCode::FORBIDDEN);
    assert!(!String::from_utf8_lossy(&body).contains("top secret"));

    let (status, _) = send(&app, Method::GET, "/img/nobody", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn images_without_root_are_placeholders() {
    let fx = handmade();
    let (_, app) = fx.app();
    let resp = app.oneshot(Request::get("/img/wide_1").body(Body::empty()).unwrap()).await.unwrap();
    assert_eq!(resp.status(), StatusCode::OK);
    assert_eq!(resp.headers()[header::CONTENT_TYPE], "image/svg+xml");
}

#[tokio::test]
async fn token_guards_api_when_configured() {
    let fx = handmade();
    let session = Arc::new(fx.session().with_token("s3cret"));
    let app = router(session, None);
    let (status, body) = send(&app, Method::GET, "/api/queue", None).await;
    assert_eq!(status, StatusCode::UNAUTHORIZED);
    assert!(String::from_utf8_lossy(&body).contains("token"));
    let req = Request::get("/api/queue").header(TOKEN_HEADER, "wrong").body(Body::empty()).unwrap();
    assert_eq!(app.clone().oneshot(req).await.unwrap().status(), StatusCode::UNAUTHORIZED);
    let req = Request::get("/api/queue").header(TOKEN_HEADER, "s3cret").body(Body::empty()).unwrap();
    assert_eq!(app.clone().oneshot(req).await.unwrap().status(), StatusCode::OK);
    let (status, _) = send(&app, Method::GET, "/img/odd_x?token=s3cret", None).await;
    assert_eq!(status, StatusCode::OK);
}

#[tokio::test]
async fn report_tables_need_their_inputs() {
    let fx = planted();
    let (_, app) = fx.app();
    assert_eq!(send(&app, Method::GET, "/api/report/histogram", None).await.0, StatusCode::NOT_FOUND);
    assert_eq!(send(&app, Method::GET, "/api/report/roc", None).await.0, StatusCode::NOT_FOUND);

    let session = fx
        .session()
        .with_scores(fx.scores.clone())
        .with_embeddings(fx.embeddings.clone(), RocOptions { negative_pairs: Some(2000), ..RocOptions::default() });
    let app = router(Arc::new(session), None);
    let (status, h) = get_json(&app, "/api/report/histogram").await;
    assert_eq!(status, StatusCode::OK);
    let rows = h["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 50);
    assert_eq!(rows.iter().map(|r| r["count"].as_u64().unwrap()).sum::<u64>(), 100);
    assert_eq!(h["total"], 100);
    assert_eq!(rows[0]["bin_lo"], 0.0);

    let (status, roc) = get_json(&app, "/api/report/roc").await;
    assert_eq!(status, StatusCode::OK);
    let positives: usize = fx
        .manifest
        .identities()
        .map(|(_, p)| p.len() * (p.len() - 1) / 2)
        .sum();
    assert_eq!(roc["positives"], positives);
    assert_eq!(roc["negatives"], 2000);
    let pts = roc["rows"].as_array().unwrap();
    assert_eq!(pts[0]["threshold"], Value::Null);
    assert_eq!(pts[0]["tpr"], 0.0);
    assert_eq!(pts.last().unwrap()["tpr"], 1.0);
    assert_eq!(pts.last().unwrap()["fpr"], 1.0);
    let auc = roc["auc"].as_f64().unwrap();
    assert!(auc > 0.9, "{auc}");
}

#[tokio::test]
async fn ui_directory_is_served_as_fallback() {
    let fx = handmade();
    let ui = fx.dir.path().join("ui");
    std::fs::create_dir_all(&ui).unwrap();
    std::fs::write(ui.join("index.html"), "<html>review</html>").unwrap();
    let app = router(Arc::new(fx.session()), Some(&ui));
    let (status, body) = send(&app, Method::GET, "/index.html", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body, b"<html>review</html>");
    let (status, _) = send(&app, Method::GET, "/api/queue", None).await;
    assert_eq!(status, StatusCode::OK);
}

#[tokio::test]
async fn serves_over_tcp_and_shuts_down() {
    use tokio::io::{AsyncReadExt, AsyncWriteExt};
    let fx = handmade();
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    let (tx, rx) = tokio::sync::oneshot::channel::<()>();
    let app = router(Arc::new(fx.session()), None);
    let server = tokio::spawn(idclean_service::serve(listener, app, async {
        let _ = rx.await;
    }));
    let mut stream = tokio::net::TcpStream::connect(addr).await.unwrap();
    stream
        .write_all(b"GET /api/progress HTTP/1.1\r\nHost: localhost\r\nConnection: close\r\n\r\n")
        .await
        .unwrap();
    let mut buf = String::new();
    stream.read_to_string(&mut buf).await.unwrap();
    assert!(buf.starts_with("HTTP/1.1 200"), "{buf}");
    assert!(buf.contains("\"pending\":2"));
    tx.send(()).unwrap();
    server.await.unwrap().unwrap();
}
