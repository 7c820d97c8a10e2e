mod common;

use std::sync::Arc;
use std::time::Duration;

use axum::body::Body;
use axum::http::{header, Request, StatusCode};
use axum::Router;
use cgt::server::router;
use cgt::store::Store;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

struct Api {
    app: Router,
    store: Arc<Store>,
    _dir: tempfile::TempDir,
}

struct Reply {
    status: StatusCode,
    etag: Option<String>,
    body: Vec<u8>,
}

impl Reply {
    fn json(&self) -> Value {
        serde_json::from_slice(&self.body).unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(&self.body)))
    }
}

fn api(token: Option<&str>) -> Api {
    let dir = tempfile::tempdir().unwrap();
    let store = Arc::new(Store::open(dir.path(), 1).unwrap());
    Api { app: router(store.clone(), token.map(String::from)), store, _dir: dir }
}

impl Api {
    async fn send(&self, req: Request<Body>) -> Reply {
        let resp = self.app.clone().oneshot(req).await.unwrap();
        let status = resp.status();
        let etag = resp.headers().get(header::ETAG).map(|v| v.to_str().unwrap().to_string());
        let body = resp.into_body().collect().await.unwrap().to_bytes().to_vec();
        Reply { status, etag, body }
    }

    async fn call(&self, method: &str, uri: &str, body: Option<Value>, headers: &[(&str, &str)]) -> Reply {
        let mut b = Request::builder().method(method).uri(format!("/api/v1{uri}"));
        for (k, v) in headers {
            b = b.header(*k, *v);
        }
        let body = match body {
            Some(v) => {
                b = b.header(header::CONTENT_TYPE, "application/json");
                Body::from(v.to_string())
            }
            None => Body::empty(),
        };
        self.send(b.body(body).unwrap()).await
    }

    async fn get(&self, uri: &str) -> Reply {
        self.call("GET", uri, None, &[]).await
    }

    async fn wait_done(&self, run_id: &str) -> Value {
        for _ in 0..600 {
            let r = self.get(&format!("/runs/{run_id}")).await.json();
            if r["status"] == "done" || r["status"] == "failed" {
                return r;
            }
            tokio::time::sleep(Duration::from_millis(50)).await;
        }
        panic!("run {run_id} did not finish");
    }
}

fn multipart(parts: &[(&str, &str)]) -> (String, String) {
    let boundary = "cgtBOUNDARY42".to_string();
    let mut body = String::new();
    for (name, content) in parts {
        body.push_str(&format!("--{boundary}\r\nContent-Disposition: form-data; name=\"{name}\"; filename=\"{name}.dat\"\r\nContent-Type: application/octet-stream\r\n\r\n{content}\r\n"));
    }
    body.push_str(&format!("--{boundary}--\r\n"));
    (boundary, body)
}

const POSTS: &str = r#"{"id":"a","kind":"post","text":"Booking classes with students is hard"}
{"id":"b","kind":"post","text":"The students cancelled classes again"}
{"id":"c","kind":"post","text":"Booking slots for students every morning"}
"#;

#[tokio::test]
async fn errors_are_json_with_codes() {
    let a = api(None);
    let r = a.get("/projects/missing").await;
    assert_eq!(r.status, StatusCode::NOT_FOUND);
    assert_eq!(r.json()["code"], "not_found");
    let r = a.call("POST", "/projects", Some(json!({"name": ""})), &[]).await;
    assert_eq!(r.status, StatusCode::BAD_REQUEST);
    assert_eq!(r.json()["field"], "name");
    let r = a.call("POST", "/projects", Some(json!({"title": "x"})), &[]).await;
    assert_eq!((r.status, r.json()["code"].as_str().unwrap()), (StatusCode::BAD_REQUEST, "invalid_params"));
    let r = a.call("POST", "/projects", Some(json!({"name": "p"})), &[]).await;
    assert_eq!(r.status, StatusCode::CREATED);
    let pid = r.json()["project_id"].as_str().unwrap().to_string();
    let r = a.call("POST", "/projects", Some(json!({"name": "p"})), &[]).await;
    assert_eq!((r.status, r.json()["code"].as_str().unwrap()), (StatusCode::CONFLICT, "conflict"));
    let r = a.call("POST", &format!("/projects/{pid}/runs"), Some(json!({"kind": "lda", "params": {"k": 3}})), &[]).await;
    assert_eq!(r.status, StatusCode::CONFLICT);
    let r = a.call("POST", &format!("/projects/{pid}/runs"), Some(json!({"kind": "lda", "params": {"k": 0}})), &[]).await;
    assert_eq!((r.status, r.json()["field"].as_str()), (StatusCode::BAD_REQUEST, Some("k")));
    assert_eq!(a.get("/projects").await.json().as_array().unwrap().len(), 1);
}

#[tokio::test]
async fn bearer_token_is_enforced() {
    let a = api(Some("s3cret"));
    let r = a.get("/projects").await;
    assert_eq!((r.status, r.json()["code"].as_str().unwrap()), (StatusCode::UNAUTHORIZED, "unauthorized"));
    assert_eq!(a.call("GET", "/projects", None, &[("authorization", "Bearer nope")]).await.status, StatusCode::UNAUTHORIZED);
    assert_eq!(a.call("GET", "/projects", None, &[("authorization", "Bearer s3cret")]).await.status, StatusCode::OK);
}

#[tokio::test]
async fn upload_train_and_read_a_topic() {
    let a = api(None);
    let pid = a.call("POST", "/projects", Some(json!({"name": "p"})), &[]).await.json()["project_id"].as_str().unwrap().to_string();
    let (boundary, body) = multipart(&[("file", POSTS), ("config", r#"{"min_df":1}"#)]);
    let req = Request::post(format!("/api/v1/projects/{pid}/corpus")).header(header::CONTENT_TYPE, format!("multipart/form-data; boundary={boundary}")).body(Body::from(body.clone())).unwrap();
    let r = a.send(req).await;
    assert_eq!(r.status, StatusCode::CREATED, "{}", String::from_utf8_lossy(&r.body));
    assert_eq!(r.json()["ingest"]["added"], 3);
    assert_eq!(r.json()["corpus"]["n_docs"], 3);
    let req = Request::post(format!("/api/v1/projects/{pid}/corpus")).header(header::CONTENT_TYPE, format!("multipart/form-data; boundary={boundary}")).body(Body::from(body)).unwrap();
    assert_eq!(a.send(req).await.status, StatusCode::CONFLICT);

    let r = a.call("POST", &format!("/projects/{pid}/runs"), Some(json!({"kind": "lda", "params": {"k": 2, "iterations": 30, "burn_in": 10, "sample_lag": 5, "n_samples": 4}})), &[]).await;
    assert_eq!(r.status, StatusCode::ACCEPTED);
    let run = r.json()["run_id"].as_str().unwrap().to_string();
    assert_eq!(a.wait_done(&run).await["status"], "done");

    let r = a.get(&format!("/runs/{run}/topics/0")).await;
    assert_eq!(r.status, StatusCode::OK);
    assert!(r.etag.is_none());
    let view = r.json();
    assert_eq!(view["documents"].as_array().unwrap().len(), 3);
    assert_eq!(view, serde_json::to_value(a.store.topic_view(&run, 0, 20, 5).unwrap()).unwrap());
    assert_eq!(a.get(&format!("/runs/{run}/topics/5")).await.status, StatusCode::NOT_FOUND);
    assert_eq!(a.get(&format!("/runs/{run}/topics/0?n_docs=0")).await.status, StatusCode::BAD_REQUEST);
    assert_eq!(a.get(&format!("/runs/{run}/metrics")).await.status, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn labeling_revisions_over_http() {
    let a = api(None);
    let l = {
        let store = a.store.clone();
        tokio::task::spawn_blocking(move || common::labeled_project(&store, "p")).await.unwrap()
    };
    let uri = format!("/runs/{}/topics/0/labeling", l.run_a);
    let etag = a.get(&format!("/runs/{}/topics/0", l.run_a)).await.etag.expect("labeled topics carry an etag");
    let body = json!({"labels": ["Pay", "Wages"], "theme_refs": [1], "annotator": "ann"});
    let r = a.call("PUT", &uri, Some(body.clone()), &[("if-none-match", "*")]).await;
    assert_eq!(r.status, StatusCode::CONFLICT);
    let r = a.call("PUT", &uri, Some(body.clone()), &[("if-match", &etag)]).await;
    assert_eq!(r.status, StatusCode::OK);
    let fresh = r.etag.unwrap();
    assert_ne!(fresh, etag);
    let r = a.call("PUT", &uri, Some(body.clone()), &[("if-match", &etag)]).await;
    assert_eq!((r.status, r.json()["code"].as_str().unwrap()), (StatusCode::CONFLICT, "conflict"));
    let r = a.call("PUT", &uri, Some(json!({"labels": [], "annotator": "ann"})), &[]).await;
    assert_eq!((r.status, r.json()["field"].as_str()), (StatusCode::BAD_REQUEST, Some("labels")));
    let r = a.call("PUT", &uri, Some(json!({"labels": ["x"], "theme_refs": [99], "annotator": "ann"})), &[]).await;
    assert_eq!(r.status, StatusCode::BAD_REQUEST);

    let r = a.get(&format!("/projects/{}/compare?runs={},{}", l.project, l.run_a, l.run_b)).await;
    assert_eq!(r.status, StatusCode::OK);
    assert_eq!(r.json()["union"]["novel_topics"], json!(["Scheduling"]));

    let row = format!("/projects/{}/ledger/Pay/selection", l.project);
    let r = a.get(&row).await;
    let etag = r.etag.unwrap();
    let sel = json!({"exclusions": {}, "proposals": [], "annotator": "ann"});
    assert_eq!(a.call("PUT", &row, Some(sel.clone()), &[("if-match", "\"bogus\"")]).await.status, StatusCode::CONFLICT);
    assert_eq!(a.call("PUT", &row, Some(sel), &[("if-match", &etag)]).await.status, StatusCode::OK);

    let r = a.call("POST", &format!("/projects/{}/ledger", l.project), Some(json!({"runs": [l.run_a, l.run_b], "top_n": 10, "annotator": "ann"})), &[]).await;
    assert_eq!(r.status, StatusCode::OK);
    assert_eq!(r.json()["rows"].as_array().unwrap().len(), 3);

    let node = format!("/nodes/{}:t1/judgment", l.run_a);
    let j = json!({"coherent": true, "include": true, "annotator": "ann"});
    assert_eq!(a.call("PUT", &node, Some(j.clone()), &[("if-none-match", "*")]).await.status, StatusCode::OK);
    assert_eq!(a.call("PUT", &node, Some(j), &[("if-none-match", "*")]).await.status, StatusCode::CONFLICT);
    let r = a.call("POST", &format!("/nodes/{}:t1/sample", l.run_a), Some(json!({"n": 4, "seed": 7, "annotator": "ann"})), &[]).await;
    assert_eq!(r.status, StatusCode::OK);
    assert!(r.json()["documents"].as_array().unwrap().len() <= 4);
    let audit = a.get(&format!("/projects/{}/audit", l.project)).await.json();
    assert_eq!(audit.as_array().unwrap().last().unwrap()["action"], "sample");
}

#[tokio::test]
async fn qdtm_from_ledger_and_bundle_round_trip() {
    let a = api(None);
    let l = {
        let store = a.store.clone();
        tokio::task::spawn_blocking(move || common::labeled_project(&store, "p")).await.unwrap()
    };
    let q = format!("/projects/{}/qdtm", l.project);
    let params = json!({"background_topics": 2, "iterations": 30, "burn_in": 10, "sample_lag": 10});
    assert_eq!(a.call("POST", &q, Some(json!({"ledger": true, "params": params})), &[]).await.status, StatusCode::CONFLICT);
    assert_eq!(a.call("POST", &q, Some(json!({"params": params})), &[]).await.status, StatusCode::BAD_REQUEST);
    a.call("POST", &format!("/projects/{}/ledger", l.project), Some(json!({"runs": [l.run_a, l.run_b], "top_n": 10})), &[]).await;
    let r = a.call("POST", &q, Some(json!({"ledger": true, "params": params})), &[]).await;
    assert_eq!(r.status, StatusCode::ACCEPTED);
    let run = r.json()["run_id"].as_str().unwrap().to_string();
    let done = a.wait_done(&run).await;
    assert_eq!(done["status"], "done", "{done}");
    let h = a.get(&format!("/runs/{run}/hierarchy")).await.json();
    assert_eq!(h["nodes"].as_array().unwrap().len(), 3);

    let r = a.get(&format!("/projects/{}/export", l.project)).await;
    assert_eq!(r.status, StatusCode::OK);
    let b = api(None);
    let req = Request::post("/api/v1/projects/import").header(header::CONTENT_TYPE, "application/x-tar").body(Body::from(r.body.clone())).unwrap();
    let imported = b.send(req).await;
    assert_eq!(imported.status, StatusCode::CREATED);
    let cmp = format!("/projects/{}/compare?runs={},{}", l.project, l.run_a, l.run_b);
    assert_eq!(b.get(&cmp).await.json(), a.get(&cmp).await.json());
    let req = Request::post("/api/v1/projects/import").body(Body::from(r.body)).unwrap();
    assert_eq!(b.send(req).await.status, StatusCode::CONFLICT);
}
