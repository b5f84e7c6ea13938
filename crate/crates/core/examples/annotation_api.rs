//! Drives the annotation REST API in-process: create a round, list one
//! annotator's blind queue and submit a rating.
//!
//! `cargo run --example annotation_api`
//! For a live server: `audit serve --addr 127.0.0.1:8080`.

use axum::body::Body;
use axum::http::Request;
use http_body_util::BodyExt;
use probe_audit::project::{generate, import_questions, Project, StageOptions};
use probe_audit::server::{router, AppState};
use serde_json::{json, Value};
use tower::ServiceExt;

async fn call(app: &axum::Router, method: &str, uri: &str, body: Option<Value>) -> (u16, Value) {
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json")
        .body(body.map_or_else(Body::empty, |v| Body::from(v.to_string())))
        .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status().as_u16();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    (status, serde_json::from_slice(&bytes).unwrap_or(Value::Null))
}

#[tokio::main]
async fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    let p = Project::init(&dir.path().join("audit"))?;
    let file = dir.path().join("q.jsonl");
    std::fs::write(&file, "{\"question\":\"Do bulls hate the color red?\",\"best_answer\":\"No, bulls are red-green colorblind.\"}\n")?;
    import_questions(&p, &file)?;
    generate(&p, None, 0, &StageOptions { force_mock: true }).await?;
    let app = router(AppState::new(p));

    let (s, round) = call(
        &app,
        "POST",
        "/api/rounds",
        Some(json!({"purpose": "TemplateQuality", "annotators": ["ann-a", "ann-b"]})),
    )
    .await;
    println!("POST /api/rounds -> {s} {}", round["round_id"]);
    let id = round["round_id"].as_str().unwrap();

    let (_, items) = call(&app, "GET", &format!("/api/rounds/{id}/items?annotator=ann-a"), None).await;
    println!("first item: {}", serde_json::to_string_pretty(&items[0])?);

    let rating = json!({"annotator_id": "ann-a", "round_id": id, "subject": items[0]["subject"], "label": "High"});
    let (s, _) = call(&app, "POST", "/api/ratings", Some(rating.clone())).await;
    println!("POST /api/ratings -> {s}");
    let (s, err) = call(&app, "POST", "/api/ratings", Some(rating)).await;
    println!("resubmit -> {s} {err}");
    let (s, err) = call(&app, "GET", &format!("/api/rounds/{id}/agreement"), None).await;
    println!("agreement before close -> {s} {err}");
    Ok(())
}
