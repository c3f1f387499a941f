use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use pagebench::elo::load_judgments;
use pagebench::review::{ReviewPair, ReviewQueue};
use pagebench_cli::review_server::router;
use serde_json::{json, Value};
use tower::ServiceExt;

fn pairs() -> Vec<ReviewPair> {
    (0..3)
        .map(|i| ReviewPair {
            pair_id: format!("p{i:05}"),
            page_id: format!("doc_pg{i}"),
            page_image_url: format!("/pages/doc_pg{i}.png"),
            tool_a: "alpha".into(),
            tool_b: "beta".into(),
            text_a: format!("alpha text {i}"),
            text_b: format!("beta text {i}"),
        })
        .collect()
}

async fn call(app: &Router, req: Request<Body>) -> (StatusCode, Vec<u8>) {
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes().to_vec();
    (status, bytes)
}

async fn next(app: &Router, annotator: &str) -> (StatusCode, Value) {
    let req = Request::get(format!("/api/next?annotator={annotator}")).body(Body::empty()).unwrap();
    let (status, body) = call(app, req).await;
    (status, serde_json::from_slice(&body).unwrap())
}

async fn submit(app: &Router, body: Value) -> (StatusCode, Value) {
    let req = Request::post("/api/submit")
        .header("content-type", "application/json")
        .body(Body::from(body.to_string()))
        .unwrap();
    let (status, body) = call(app, req).await;
    (status, serde_json::from_slice(&body).unwrap_or(Value::Null))
}

#[tokio::test]
async fn serves_blind_items_and_records_judgments() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("judgments.jsonl");
    let queue = ReviewQueue::open(pairs(), 4, &path).unwrap();
    let app = router(Arc::new(queue), None, None);

    let mut served = Vec::new();
    loop {
        let (status, item) = next(&app, "ann").await;
        assert_eq!(status, StatusCode::OK);
        if item["status"] == "complete" {
            assert_eq!(item["served"], 3);
            break;
        }
        let text = item.to_string();
        assert!(!text.contains("\"alpha\"") && !text.contains("\"beta\"") && !text.contains("tool"), "{text}");
        // left wins every time, whichever tool is on the left
        let (status, ack) = submit(&app, json!({"pair_id": item["pair_id"], "choice": "left", "annotator": "ann"})).await;
        assert_eq!(status, StatusCode::OK, "{ack}");
        assert_eq!(ack["superseded"], false);
        served.push(item);
    }
    assert_eq!(served.len(), 3);

    let judgments = load_judgments(&path).unwrap();
    assert_eq!(judgments.len(), 3);
    for (j, item) in judgments.iter().zip(&served) {
        let left = item["left_text"].as_str().unwrap();
        let winner = j.game().unwrap().winner;
        assert!(left.starts_with(&winner), "{left} vs {winner}");
    }
}

#[tokio::test]
async fn rejects_bad_submissions() {
    let app = router(Arc::new(ReviewQueue::in_memory(pairs(), 1)), None, None);
    let (status, _) = next(&app, "").await;
    assert_eq!(status, StatusCode::BAD_REQUEST);

    let (status, _) = submit(&app, json!({"pair_id": "nope", "choice": "left", "annotator": "a"})).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (status, _) = submit(&app, json!({"pair_id": "p00000", "choice": "left", "annotator": "a"})).await;
    assert_eq!(status, StatusCode::CONFLICT);
    let (status, _) = submit(&app, json!({"pair_id": "p00000", "choice": "sideways", "annotator": "a"})).await;
    assert!(status.is_client_error());
}

#[tokio::test]
async fn serves_front_end_and_page_images() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("doc_pg1.png"), b"\x89PNG fake").unwrap();
    let app = router(Arc::new(ReviewQueue::in_memory(pairs(), 1)), Some(dir.path().to_path_buf()), None);

    let (status, body) = call(&app, Request::get("/").body(Body::empty()).unwrap()).await;
    assert_eq!(status, StatusCode::OK);
    assert!(String::from_utf8_lossy(&body).contains("/api/next"));

    let (status, body) = call(&app, Request::get("/pages/doc_pg1.png").body(Body::empty()).unwrap()).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body, b"\x89PNG fake");

    let statics = tempfile::tempdir().unwrap();
    std::fs::write(statics.path().join("index.html"), "custom app").unwrap();
    let app = router(Arc::new(ReviewQueue::in_memory(pairs(), 1)), None, Some(statics.path().to_path_buf()));
    let (_, body) = call(&app, Request::get("/").body(Body::empty()).unwrap()).await;
    assert_eq!(body, b"custom app");
}
