//! HTTP/JSON API over a [`Store`], mounted under `/api/v1`.
//!
//! Errors are returned as `{"code", "message", "field"?}`. Entities that can
//! be edited carry an `ETag`; a write with a stale `If-Match` gets 409, and
//! `If-None-Match: *` asks for a write that only succeeds on creation.

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, Multipart, Path, Query, Request, State};
use axum::http::{header, HeaderMap, HeaderValue, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post, put};
use axum::{Json, Router};
use cgt_core::qdtm::Query as TopicQuery;
use cgt_core::validation::Theme;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::params::{BuildParams, LdaParams, QdtmParams, SweepParams};
use crate::store::{JudgmentInput, LabelingInput, RowSelection, RunSpec, Store, NO_REVISION};
use crate::{Error, Result};

#[derive(Clone)]
struct AppState {
    store: Arc<Store>,
    token: Option<Arc<str>>,
}

#[derive(Serialize)]
struct ErrorBody<'a> {
    code: &'a str,
    message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    field: Option<&'a str>,
}

pub struct ApiError(Error);

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        ApiError(e)
    }
}

pub fn status_of(e: &Error) -> StatusCode {
    match e.code() {
        "not_found" => StatusCode::NOT_FOUND,
        "conflict" => StatusCode::CONFLICT,
        "invalid_params" | "ingest" => StatusCode::BAD_REQUEST,
        "network" => StatusCode::BAD_GATEWAY,
        "storage" => StatusCode::INTERNAL_SERVER_ERROR,
        _ => StatusCode::UNPROCESSABLE_ENTITY,
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = ErrorBody { code: self.0.code(), message: self.0.to_string(), field: self.0.field() };
        (status_of(&self.0), Json(body)).into_response()
    }
}

type ApiResult = std::result::Result<Response, ApiError>;

fn parse<T: DeserializeOwned>(body: &[u8]) -> Result<T> {
    let body = if body.iter().all(u8::is_ascii_whitespace) { b"{}".as_slice() } else { body };
    serde_json::from_slice(body).map_err(|e| Error::invalid("body", e.to_string()))
}

async fn blocking<T, F>(state: &AppState, f: F) -> Result<T>
where
    T: Send + 'static,
    F: FnOnce(&Store) -> Result<T> + Send + 'static,
{
    let store = state.store.clone();
    tokio::task::spawn_blocking(move || f(&store)).await.map_err(|e| Error::Conflict(format!("worker failed: {e}")))?
}

fn json<T: Serialize>(status: StatusCode, value: &T) -> Response {
    (status, Json(value)).into_response()
}

fn with_etag<T: Serialize>(value: &T, etag: &str) -> Response {
    let mut r = json(StatusCode::OK, value);
    if let Ok(v) = HeaderValue::from_str(&format!("\"{etag}\"")) {
        r.headers_mut().insert(header::ETAG, v);
    }
    r
}

fn revision_header(headers: &HeaderMap) -> Option<String> {
    if headers.get(header::IF_NONE_MATCH).and_then(|v| v.to_str().ok()).is_some_and(|v| v.trim() == "*") {
        return Some(NO_REVISION.to_string());
    }
    let v = headers.get(header::IF_MATCH).and_then(|v| v.to_str().ok())?.trim();
    Some(v.strip_prefix("W/").unwrap_or(v).trim_matches('"').to_string())
}

async fn auth(State(state): State<AppState>, req: Request, next: Next) -> Response {
    if let Some(token) = &state.token {
        let ok = req.headers().get(header::AUTHORIZATION).and_then(|v| v.to_str().ok()).and_then(|v| v.strip_prefix("Bearer ")).is_some_and(|t| t == &**token);
        if !ok {
            let body = ErrorBody { code: "unauthorized", message: "missing or wrong bearer token".into(), field: None };
            return (StatusCode::UNAUTHORIZED, Json(body)).into_response();
        }
    }
    next.run(req).await
}

/// Builds the API router. With a `token`, every request must carry
/// `Authorization: Bearer <token>`.
pub fn router(store: Arc<Store>, token: Option<String>) -> Router {
    let state = AppState { store, token: token.map(Into::into) };
    let api = Router::new()
        .route("/projects", get(list_projects).post(create_project))
        .route("/projects/import", post(import_project))
        .route("/projects/{id}", get(get_project))
        .route("/projects/{id}/corpus", post(upload_corpus))
        .route("/projects/{id}/themes", put(put_themes))
        .route("/projects/{id}/runs", get(list_runs).post(create_run))
        .route("/projects/{id}/compare", get(compare_runs))
        .route("/projects/{id}/ledger", post(build_ledger))
        .route("/projects/{id}/ledger/{row}/selection", get(get_selection).put(put_selection))
        .route("/projects/{id}/qdtm", post(start_qdtm))
        .route("/projects/{id}/audit", get(audit_log))
        .route("/projects/{id}/export", get(export))
        .route("/runs/{id}", get(get_run))
        .route("/runs/{id}/metrics", get(run_metrics))
        .route("/runs/{id}/hierarchy", get(run_hierarchy))
        .route("/runs/{id}/topics/{k}", get(topic_view))
        .route("/runs/{id}/topics/{k}/labeling", put(put_labeling))
        .route("/nodes/{id}/judgment", put(put_judgment))
        .route("/nodes/{id}/sample", post(sample))
        .layer(middleware::from_fn_with_state(state.clone(), auth))
        .layer(DefaultBodyLimit::max(512 * 1024 * 1024))
        .with_state(state);
    Router::new().nest("/api/v1", api)
}

/// Serves the API until interrupted.
pub async fn serve(store: Arc<Store>, addr: SocketAddr, token: Option<String>) -> Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await.map_err(|e| Error::io(addr.to_string(), e))?;
    eprintln!("listening on http://{}/api/v1", listener.local_addr().map_err(|e| Error::io(addr.to_string(), e))?);
    axum::serve(listener, router(store, token))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .map_err(|e| Error::io(addr.to_string(), e))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CreateProject {
    name: String,
}

async fn list_projects(State(s): State<AppState>) -> ApiResult {
    Ok(json(StatusCode::OK, &blocking(&s, |st| st.list_projects()).await?))
}

async fn create_project(State(s): State<AppState>, body: Bytes) -> ApiResult {
    let req: CreateProject = parse(&body)?;
    Ok(json(StatusCode::CREATED, &blocking(&s, move |st| st.create_project(&req.name)).await?))
}

async fn import_project(State(s): State<AppState>, body: Bytes) -> ApiResult {
    Ok(json(StatusCode::CREATED, &blocking(&s, move |st| st.import_bundle(&body)).await?))
}

async fn get_project(State(s): State<AppState>, Path(id): Path<String>) -> ApiResult {
    Ok(json(StatusCode::OK, &blocking(&s, move |st| st.get_project(&id)).await?))
}

/// Multipart upload: a `file` part with JSONL posts and an optional `config`
/// part with build parameters. The corpus is built unless `build=false`.
async fn upload_corpus(State(s): State<AppState>, Path(id): Path<String>, Query(q): Query<BTreeMap<String, String>>, mut form: Multipart) -> ApiResult {
    let mut data = None;
    let mut params = BuildParams::default();
    while let Some(field) = form.next_field().await.map_err(|e| Error::invalid("file", e.to_string()))? {
        match field.name() {
            Some("file") => data = Some(field.bytes().await.map_err(|e| Error::invalid("file", e.to_string()))?),
            Some("config") => params = parse(&field.bytes().await.map_err(|e| Error::invalid("config", e.to_string()))?)?,
            other => return Err(Error::invalid("multipart", format!("unexpected part {other:?}")).into()),
        }
    }
    let data = data.ok_or_else(|| Error::invalid("file", "missing JSONL part"))?;
    if params.stoplist_file.is_some() {
        return Err(Error::invalid("stoplist_file", "not accepted over HTTP").into());
    }
    let build = q.get("build").is_none_or(|v| v != "false");
    let out = blocking(&s, move |st| {
        let ingest = st.ingest(&id, std::io::Cursor::new(data))?;
        let corpus = if build { Some(st.build(&id, &params.resolve()?)?) } else { None };
        Ok(serde_json::json!({"ingest": ingest, "corpus": corpus}))
    })
    .await?;
    Ok(json(StatusCode::CREATED, &out))
}

#[derive(Deserialize)]
struct ThemesQuery {
    annotator: Option<String>,
}

async fn put_themes(State(s): State<AppState>, Path(id): Path<String>, Query(q): Query<ThemesQuery>, body: Bytes) -> ApiResult {
    let themes: Vec<Theme> = parse(&body)?;
    let annotator = q.annotator.unwrap_or_default();
    blocking(&s, move |st| st.set_themes(&id, themes, &annotator)).await?;
    Ok(StatusCode::NO_CONTENT.into_response())
}

#[derive(Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
enum RunRequest {
    Lda {
        #[serde(default)]
        params: LdaParams,
    },
    Sweep {
        #[serde(default)]
        params: SweepParams,
    },
    Qdtm {
        queries: Vec<TopicQuery>,
        #[serde(default)]
        params: QdtmParams,
    },
}

impl RunRequest {
    fn resolve(self) -> Result<RunSpec> {
        Ok(match self {
            RunRequest::Lda { params } => RunSpec::Lda { config: params.resolve()? },
            RunRequest::Sweep { params } => RunSpec::Sweep { config: params.resolve()? },
            RunRequest::Qdtm { queries, params } => {
                let (config, jobs) = params.resolve()?;
                RunSpec::Qdtm { queries, config, jobs }
            }
        })
    }
}

async fn create_run(State(s): State<AppState>, Path(id): Path<String>, body: Bytes) -> ApiResult {
    let spec = parse::<RunRequest>(&body)?.resolve()?;
    let store = s.store.clone();
    let rec = tokio::task::spawn_blocking(move || store.start_run(&id, spec)).await.map_err(|e| Error::Conflict(e.to_string()))??;
    Ok(json(StatusCode::ACCEPTED, &rec))
}

async fn list_runs(State(s): State<AppState>, Path(id): Path<String>) -> ApiResult {
    Ok(json(StatusCode::OK, &blocking(&s, move |st| st.list_runs(&id)).await?))
}

#[derive(Deserialize)]
struct CompareQuery {
    runs: String,
}

async fn compare_runs(State(s): State<AppState>, Path(id): Path<String>, Query(q): Query<CompareQuery>) -> ApiResult {
    let runs: Vec<String> = q.runs.split(',').map(str::trim).filter(|r| !r.is_empty()).map(String::from).collect();
    Ok(json(StatusCode::OK, &blocking(&s, move |st| st.compare_runs(&id, &runs)).await?))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct LedgerRequest {
    runs: [String; 2],
    #[serde(default = "default_top_n")]
    top_n: usize,
    #[serde(default)]
    annotator: String,
}

fn default_top_n() -> usize {
    20
}

async fn build_ledger(State(s): State<AppState>, Path(id): Path<String>, body: Bytes) -> ApiResult {
    let req: LedgerRequest = parse(&body)?;
    let ledger = blocking(&s, move |st| st.build_ledger(&id, [&req.runs[0], &req.runs[1]], req.top_n, &req.annotator)).await?;
    Ok(json(StatusCode::OK, &ledger))
}

async fn get_selection(State(s): State<AppState>, Path((id, row)): Path<(String, String)>) -> ApiResult {
    let (sel, rev) = blocking(&s, move |st| st.selection(&id, &row)).await?;
    Ok(with_etag(&sel, &rev))
}

async fn put_selection(State(s): State<AppState>, Path((id, row)): Path<(String, String)>, headers: HeaderMap, body: Bytes) -> ApiResult {
    let sel: RowSelection = parse(&body)?;
    let rev = revision_header(&headers);
    let (sel, rev) = blocking(&s, move |st| st.put_selection(&id, &row, sel, rev.as_deref())).await?;
    Ok(with_etag(&sel, &rev))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct QdtmRequest {
    /// Explicit queries; when absent the queries of the last built ledger.
    #[serde(default)]
    queries: Option<Vec<TopicQuery>>,
    #[serde(default)]
    ledger: bool,
    #[serde(default)]
    params: QdtmParams,
}

async fn start_qdtm(State(s): State<AppState>, Path(id): Path<String>, body: Bytes) -> ApiResult {
    let req: QdtmRequest = parse(&body)?;
    if req.ledger == req.queries.is_some() {
        return Err(Error::invalid("queries", "give either queries or \"ledger\": true").into());
    }
    let (config, jobs) = req.params.resolve()?;
    let store = s.store.clone();
    let rec = tokio::task::spawn_blocking(move || {
        let queries = match req.queries {
            Some(q) => q,
            None => store.ledger_queries(&id)?,
        };
        store.start_run(&id, RunSpec::Qdtm { queries, config, jobs })
    })
    .await
    .map_err(|e| Error::Conflict(e.to_string()))??;
    Ok(json(StatusCode::ACCEPTED, &rec))
}

async fn audit_log(State(s): State<AppState>, Path(id): Path<String>) -> ApiResult {
    Ok(json(StatusCode::OK, &blocking(&s, move |st| st.audit_log(&id)).await?))
}

async fn export(State(s): State<AppState>, Path(id): Path<String>) -> ApiResult {
    let name = format!("attachment; filename=\"{id}.tar\"");
    let bytes = blocking(&s, move |st| st.export_bundle(&id)).await?;
    Ok(([(header::CONTENT_TYPE, "application/x-tar".to_string()), (header::CONTENT_DISPOSITION, name)], bytes).into_response())
}

async fn get_run(State(s): State<AppState>, Path(id): Path<String>) -> ApiResult {
    Ok(json(StatusCode::OK, &blocking(&s, move |st| st.get_run(&id)).await?))
}

async fn run_metrics(State(s): State<AppState>, Path(id): Path<String>) -> ApiResult {
    Ok(json(StatusCode::OK, &blocking(&s, move |st| st.metrics(&id)).await?))
}

async fn run_hierarchy(State(s): State<AppState>, Path(id): Path<String>) -> ApiResult {
    Ok(json(StatusCode::OK, &blocking(&s, move |st| st.hierarchy(&id)).await?))
}

#[derive(Deserialize)]
struct ViewQuery {
    n_terms: Option<usize>,
    n_docs: Option<usize>,
}

async fn topic_view(State(s): State<AppState>, Path((id, k)): Path<(String, usize)>, Query(q): Query<ViewQuery>) -> ApiResult {
    let view = blocking(&s, move |st| st.topic_view(&id, k, q.n_terms.unwrap_or(20), q.n_docs.unwrap_or(5))).await?;
    Ok(match view.revision.clone() {
        Some(rev) => with_etag(&view, &rev),
        None => json(StatusCode::OK, &view),
    })
}

async fn put_labeling(State(s): State<AppState>, Path((id, k)): Path<(String, usize)>, headers: HeaderMap, body: Bytes) -> ApiResult {
    let input: LabelingInput = parse(&body)?;
    let rev = revision_header(&headers);
    let (l, rev) = blocking(&s, move |st| st.put_labeling(&id, k, input, rev.as_deref())).await?;
    Ok(with_etag(&l, &rev))
}

async fn put_judgment(State(s): State<AppState>, Path(id): Path<String>, headers: HeaderMap, body: Bytes) -> ApiResult {
    let input: JudgmentInput = parse(&body)?;
    let rev = revision_header(&headers);
    let (j, rev) = blocking(&s, move |st| st.put_judgment(&id, input, rev.as_deref())).await?;
    Ok(with_etag(&j, &rev))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SampleRequest {
    n: usize,
    #[serde(default)]
    seed: u64,
    #[serde(default)]
    annotator: String,
}

async fn sample(State(s): State<AppState>, Path(id): Path<String>, body: Bytes) -> ApiResult {
    let req: SampleRequest = parse(&body)?;
    let node = id.clone();
    let docs = blocking(&s, move |st| st.sample_documents(&id, req.n, req.seed, &req.annotator)).await?;
    Ok(json(StatusCode::OK, &serde_json::json!({"node_id": node, "seed": req.seed, "documents": docs})))
}
