use std::sync::Arc;

use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

use ordutil_service::api::router;
use ordutil_service::session::SessionStore;

const WORKED: &str = "prefer (X1 or X2) over (not X3)\nprefer X3 over X4\nprefer X1 over X2";

/// The seven alternatives of the worked example, listed out of order.
const CATALOG: &str = "\
id,X1,X2,X3,X4
e,true,true,false,false
a,true,false,true,false
g,false,false,false,true
c,false,false,true,false
b,true,true,true,false
f,true,true,false,true
d,true,true,true,true
";

fn schema(n: usize) -> Value {
    json!({ "attributes": (1..=n).map(|i| json!({ "name": format!("X{i}") })).collect::<Vec<_>>() })
}

async fn call(
    app: &Router,
    method: Method,
    uri: &str,
    body: Option<Value>,
) -> (StatusCode, String) {
    let req = Request::builder().method(method).uri(uri);
    let req = match body {
        Some(v) => req
            .header("content-type", "application/json")
            .body(Body::from(v.to_string())),
        None => req.body(Body::empty()),
    }
    .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    (status, String::from_utf8(bytes.to_vec()).unwrap())
}

async fn call_json(
    app: &Router,
    method: Method,
    uri: &str,
    body: Option<Value>,
) -> (StatusCode, Value) {
    let (status, text) = call(app, method, uri, body).await;
    (status, serde_json::from_str(&text).unwrap_or(Value::Null))
}

async fn worked_session(app: &Router) -> String {
    let (status, v) = call_json(
        app,
        Method::POST,
        "/sessions",
        Some(json!({ "schema": schema(4), "catalog": CATALOG, "config": { "unweighted": true } })),
    )
    .await;
    assert_eq!(status, StatusCode::CREATED, "{v}");
    assert_eq!(v["revision"], 0);
    v["id"].as_str().unwrap().to_string()
}

fn app() -> Router {
    router(Arc::new(SessionStore::in_memory()))
}

#[tokio::test]
async fn worked_example_round_trip() {
    let app = app();
    let id = worked_session(&app).await;

    let (status, v) = call_json(
        &app,
        Method::POST,
        &format!("/sessions/{id}/statements"),
        Some(json!({ "text": WORKED })),
    )
    .await;
    assert_eq!(status, StatusCode::OK, "{v}");
    assert_eq!(v["statements"], 3);
    assert_eq!(v["constraints"], 5);
    let counts: Vec<u64> = v["added"]
        .as_array()
        .unwrap()
        .iter()
        .map(|s| s["constraints"].as_u64().unwrap())
        .collect();
    assert_eq!(counts, vec![3, 1, 1]);
    assert_eq!(v["added"][0]["id"], "s1");

    let (status, v) = call_json(&app, Method::GET, &format!("/sessions/{id}/ranking"), None).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(v["error"], "not_solved");

    let (status, v) = call_json(&app, Method::POST, &format!("/sessions/{id}/solve"), None).await;
    assert_eq!(status, StatusCode::OK, "{v}");
    assert_eq!(v["verdict"], "optimal");
    let active: Vec<bool> = v["statements"]
        .as_array()
        .unwrap()
        .iter()
        .map(|s| s["active"].as_bool().unwrap())
        .collect();
    assert_eq!(active, vec![true, true, true]);

    let (status, v) = call_json(&app, Method::GET, &format!("/sessions/{id}/ranking"), None).await;
    assert_eq!(status, StatusCode::OK);
    let ids: Vec<&str> = v["items"]
        .as_array()
        .unwrap()
        .iter()
        .map(|i| i["id"].as_str().unwrap())
        .collect();
    assert_eq!(ids, vec!["a", "b", "c", "d", "e", "f", "g"]);
    let expected = [1.25, 1.05, 0.9, 0.55, 0.1, -0.4, -0.55];
    for (item, e) in v["items"].as_array().unwrap().iter().zip(expected) {
        assert!((item["utility"].as_f64().unwrap() - e).abs() < 1e-6);
    }

    let (_, top) = call_json(
        &app,
        Method::GET,
        &format!("/sessions/{id}/ranking?top=3"),
        None,
    )
    .await;
    assert_eq!(top["items"].as_array().unwrap().len(), 3);
    assert_eq!(top["total"], 7);

    let (status, v) = call_json(
        &app,
        Method::GET,
        &format!("/sessions/{id}/utility/c"),
        None,
    )
    .await;
    assert_eq!(status, StatusCode::OK);
    assert!((v["utility"].as_f64().unwrap() - 0.9).abs() < 1e-6);
    let (status, v) = call_json(
        &app,
        Method::GET,
        &format!("/sessions/{id}/utility/zz"),
        None,
    )
    .await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(v["error"], "unknown_item");

    let (status, v) = call_json(&app, Method::GET, &format!("/sessions/{id}/explain"), None).await;
    assert_eq!(status, StatusCode::OK);
    let weights = v["weights"].as_array().unwrap();
    let find = |m: Value| {
        weights
            .iter()
            .find(|w| w["monomial"] == m)
            .map(|w| w["weight"].as_f64().unwrap())
    };
    assert!((find(json!({"X1": "true"})).unwrap() - 0.75).abs() < 1e-6);
    assert!((find(json!({"X1": "false", "X2": "true"})).unwrap() - 0.4).abs() < 1e-6);
    assert!(find(json!({"X1": "false", "X2": "false"})).is_none());
    assert_eq!(weights.len(), 8);

    let (status, v) = call_json(
        &app,
        Method::GET,
        &format!("/sessions/{id}/diagnostics"),
        None,
    )
    .await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(v["stale"], false);
    assert_eq!(v["kkt"]["violated"], 0);
    let slack = v["kkt"]["constraints"][1]["slack"].as_f64().unwrap();
    assert!((slack - 0.2).abs() < 1e-6);
}

#[tokio::test]
async fn reads_are_idempotent() {
    let app = app();
    let id = worked_session(&app).await;
    call(
        &app,
        Method::POST,
        &format!("/sessions/{id}/statements"),
        Some(json!({ "text": WORKED })),
    )
    .await;
    call(&app, Method::POST, &format!("/sessions/{id}/solve"), None).await;
    let uri = format!("/sessions/{id}/ranking");
    let (_, first) = call(&app, Method::GET, &uri, None).await;
    for _ in 0..3 {
        assert_eq!(call(&app, Method::GET, &uri, None).await.1, first);
    }
}

#[tokio::test]
async fn staleness_follows_writes() {
    let app = app();
    let id = worked_session(&app).await;
    let stmts = format!("/sessions/{id}/statements");
    call(
        &app,
        Method::POST,
        &stmts,
        Some(json!({ "text": "prefer X1 over X2" })),
    )
    .await;
    call(&app, Method::POST, &format!("/sessions/{id}/solve"), None).await;

    let (_, v) = call_json(
        &app,
        Method::POST,
        &stmts,
        Some(json!({ "text": "good: X3" })),
    )
    .await;
    assert_eq!(v["revision"], 2);
    assert_eq!(v["added"][0]["id"], "s2");
    let (status, v) = call_json(&app, Method::GET, &format!("/sessions/{id}/ranking"), None).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(v["error"], "stale");
    let (_, v) = call_json(
        &app,
        Method::GET,
        &format!("/sessions/{id}/diagnostics"),
        None,
    )
    .await;
    assert_eq!(v["stale"], true);

    // Blank and comment-only bodies change nothing.
    let (_, v) = call_json(
        &app,
        Method::POST,
        &stmts,
        Some(json!({ "text": "\n# nothing\n" })),
    )
    .await;
    assert_eq!(v["revision"], 2);
    assert_eq!(v["added"].as_array().unwrap().len(), 0);

    call(&app, Method::POST, &format!("/sessions/{id}/solve"), None).await;
    let (status, _) = call(&app, Method::GET, &format!("/sessions/{id}/ranking"), None).await;
    assert_eq!(status, StatusCode::OK);

    let (status, v) = call_json(&app, Method::DELETE, &format!("{stmts}/s1"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(v["revision"], 3);
    let (status, v) = call_json(&app, Method::DELETE, &format!("{stmts}/s1"), None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(v["error"], "unknown_statement");
    let (_, info) = call_json(&app, Method::GET, &format!("/sessions/{id}"), None).await;
    assert_eq!(info["stale"], true);
    assert_eq!(info["statements"][0]["id"], "s2");
}

#[tokio::test]
async fn validation_errors_are_client_errors() {
    let app = app();
    let (status, v) = call_json(
        &app,
        Method::POST,
        "/sessions",
        Some(json!({ "schema": schema(2), "catalog": "id,X1,X2\na,true,maybe\n" })),
    )
    .await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    let msg = v["message"].as_str().unwrap();
    assert!(msg.contains("row 1") && msg.contains("X2"), "{msg}");

    let (status, _) = call(
        &app,
        Method::POST,
        "/sessions",
        Some(json!({ "schema": 3 })),
    )
    .await;
    assert!(status.is_client_error());

    let id = worked_session(&app).await;
    let other = worked_session(&app).await;
    assert_ne!(id, other);

    let (status, v) = call_json(
        &app,
        Method::POST,
        &format!("/sessions/{id}/statements"),
        Some(json!({ "text": "prefer X1 over X2\nprefer X1 beyond X2" })),
    )
    .await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(v["error"], "statement");
    assert!(v["message"].as_str().unwrap().contains("line 2"), "{v}");
    // A failed add leaves the session untouched.
    let (_, info) = call_json(&app, Method::GET, &format!("/sessions/{id}"), None).await;
    assert_eq!(info["revision"], 0);

    let (status, v) = call_json(
        &app,
        Method::POST,
        &format!("/sessions/{id}/statements"),
        Some(json!({ "text": "prefer X1 over X1" })),
    )
    .await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(v["error"], "self_contradictory");

    let (status, v) = call_json(&app, Method::GET, "/sessions/nope/ranking", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(v["error"], "unknown_session");
}

#[tokio::test]
async fn soft_margin_recovers_from_contradictions() {
    let app = app();
    let id = worked_session(&app).await;
    call(
        &app,
        Method::POST,
        &format!("/sessions/{id}/statements"),
        Some(json!({ "text": "prefer X1 over X2\nprefer X2 over X1" })),
    )
    .await;
    let (_, v) = call_json(
        &app,
        Method::POST,
        &format!("/sessions/{id}/solve"),
        Some(json!({ "degree": 2 })),
    )
    .await;
    assert_eq!(v["verdict"], "likely_inconsistent");
    assert_eq!(v["message"], "likely inconsistent; rerun with SOFT");
    let (_, v) = call_json(
        &app,
        Method::POST,
        &format!("/sessions/{id}/solve"),
        Some(json!({ "soft_c": 1.0 })),
    )
    .await;
    assert_eq!(v["verdict"], "optimal");
    assert_eq!(v["kkt"]["violated"], 2);
    assert_eq!(v["kkt"]["census"]["at_upper"], 2);
    let (status, _) = call(
        &app,
        Method::POST,
        &format!("/sessions/{id}/solve"),
        Some(json!({ "soft_c": -1.0 })),
    )
    .await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
}

#[tokio::test]
async fn explain_reports_oracle_limit() {
    let app = app();
    let n = 14;
    let header: Vec<String> = (1..=n).map(|i| format!("X{i}")).collect();
    let row = vec!["true"; n].join(",");
    let catalog = format!("id,{}\na,{row}\n", header.join(","));
    let (_, v) = call_json(
        &app,
        Method::POST,
        "/sessions",
        Some(json!({ "schema": schema(n), "catalog": catalog })),
    )
    .await;
    let id = v["id"].as_str().unwrap();
    call(
        &app,
        Method::POST,
        &format!("/sessions/{id}/statements"),
        Some(json!({ "text": "prefer X1 over X2" })),
    )
    .await;
    let (_, v) = call_json(&app, Method::POST, &format!("/sessions/{id}/solve"), None).await;
    assert_eq!(v["verdict"], "optimal");
    let (status, v) = call_json(&app, Method::GET, &format!("/sessions/{id}/explain"), None).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(v["error"], "oracle_limit");
}

#[tokio::test]
async fn records_catalogs_are_accepted() {
    let app = app();
    let (status, v) = call_json(
        &app,
        Method::POST,
        "/sessions",
        Some(json!({
            "schema": { "attributes": [ { "name": "decade", "values": ["70s", "80s"] }, { "name": "X2" } ] },
            "catalog": [ { "id": "m1", "decade": "70s", "X2": "true" }, { "id": "m2", "decade": "80s", "X2": "false" } ],
        })),
    )
    .await;
    assert_eq!(status, StatusCode::CREATED, "{v}");
    let id = v["id"].as_str().unwrap();
    call(
        &app,
        Method::POST,
        &format!("/sessions/{id}/statements"),
        Some(json!({ "text": "good: decade=80s" })),
    )
    .await;
    call(&app, Method::POST, &format!("/sessions/{id}/solve"), None).await;
    let (_, v) = call_json(&app, Method::GET, &format!("/sessions/{id}/ranking"), None).await;
    assert_eq!(v["items"][0]["id"], "m2");
}

#[tokio::test]
async fn sessions_survive_restart() {
    let dir = tempfile::tempdir().unwrap();
    let (id, ranking, info) = {
        let app = router(Arc::new(SessionStore::open(dir.path()).unwrap()));
        let id = worked_session(&app).await;
        let stmts = format!("/sessions/{id}/statements");
        call(&app, Method::POST, &stmts, Some(json!({ "text": WORKED }))).await;
        call(
            &app,
            Method::POST,
            &stmts,
            Some(json!({ "text": "good: X4" })),
        )
        .await;
        call(&app, Method::DELETE, &format!("{stmts}/s4"), None).await;
        call(&app, Method::POST, &format!("/sessions/{id}/solve"), None).await;
        call(
            &app,
            Method::POST,
            &stmts,
            Some(json!({ "text": "bad: X2" })),
        )
        .await;
        call(
            &app,
            Method::POST,
            &format!("/sessions/{id}/solve"),
            Some(json!({ "soft_c": 5.0 })),
        )
        .await;
        let ranking = call(&app, Method::GET, &format!("/sessions/{id}/ranking"), None)
            .await
            .1;
        let info = call(&app, Method::GET, &format!("/sessions/{id}"), None)
            .await
            .1;
        (id, ranking, info)
    };
    let store = SessionStore::open(dir.path()).unwrap();
    assert_eq!(store.len(), 1);
    let app = router(Arc::new(store));
    assert_eq!(
        call(&app, Method::GET, &format!("/sessions/{id}/ranking"), None)
            .await
            .1,
        ranking
    );
    assert_eq!(
        call(&app, Method::GET, &format!("/sessions/{id}"), None)
            .await
            .1,
        info
    );

    // New writes continue the replayed log.
    let (_, v) = call_json(
        &app,
        Method::POST,
        &format!("/sessions/{id}/statements"),
        Some(json!({ "text": "good: X1" })),
    )
    .await;
    assert_eq!(v["added"][0]["id"], "s6");
    drop(app);
    let store = SessionStore::open(dir.path()).unwrap();
    let session = store.get(&id).unwrap();
    let info = session.read().info();
    assert_eq!(info.statements.len(), 5);
    assert!(info.stale);
}
