//! HTTP API over a [`Registry`].
//!
//! Bodies are JSON in both directions. Registry calls that train or evaluate
//! models run on the blocking pool; job progress is a server-sent event
//! stream that ends once the job does.

mod error;

use std::convert::Infallible;
use std::net::SocketAddr;
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::Router;
use futures::stream::{self, Stream, StreamExt};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use tokio::net::TcpListener;

use unlearn_core::registry::{ListQuery, Registry, WorkspaceSpec};
use unlearn_core::{json, AttackDirection, HyperGrid, Statistic};

pub use error::{ApiError, ErrorBody};

type ApiResult = Result<Response, ApiError>;

/// How long one poll of a job's event list may block.
const EVENT_POLL: Duration = Duration::from_millis(500);

pub fn router(registry: Registry) -> Router {
    Router::new()
        .route("/", get(index))
        .route("/methods", get(methods))
        .route("/workspaces", get(list_workspaces).post(create_workspace))
        .route("/workspaces/{w}", get(workspace))
        .route("/workspaces/{w}/builds", axum::routing::post(submit_build))
        .route("/workspaces/{w}/models", get(list_models).post(upload_model))
        .route("/workspaces/{w}/models/{id}", get(model))
        .route("/workspaces/{w}/compare", get(compare))
        .route("/workspaces/{w}/attack", get(attack))
        .route("/jobs", get(jobs))
        .route("/jobs/{id}", get(job))
        .route("/jobs/{id}/events", get(job_events))
        .fallback(|| async { ApiError::new(StatusCode::NOT_FOUND, "not_found", "no such route", None) })
        .with_state(registry)
}

pub async fn serve_on(listener: TcpListener, registry: Registry) -> std::io::Result<()> {
    axum::serve(listener, router(registry)).await
}

pub async fn serve(registry: Registry, addr: SocketAddr) -> std::io::Result<()> {
    serve_on(TcpListener::bind(addr).await?, registry).await
}

fn respond<T: Serialize>(status: StatusCode, value: &T) -> ApiResult {
    let text = json::to_string(value)?;
    Ok((status, [(header::CONTENT_TYPE, "application/json")], text).into_response())
}

fn ok<T: Serialize>(value: &T) -> ApiResult {
    respond(StatusCode::OK, value)
}

/// Parses a body, reporting where in it deserialization failed.
fn parse<T: DeserializeOwned>(body: &Bytes) -> Result<T, ApiError> {
    let de = &mut serde_json::Deserializer::from_slice(body);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let field = (path != ".").then_some(path);
        ApiError::bad_request(e.into_inner().to_string(), field.as_deref())
    })
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> unlearn_core::Result<T> + Send + 'static) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::internal(e.to_string()))?
        .map_err(ApiError::from)
}

fn required<'a>(value: &'a Option<String>, name: &str) -> Result<&'a str, ApiError> {
    value
        .as_deref()
        .filter(|v| !v.is_empty())
        .ok_or_else(|| ApiError::bad_request(format!("missing query parameter `{name}`"), Some(name)))
}

async fn index() -> ApiResult {
    #[derive(Serialize)]
    struct Index {
        service: &'static str,
        version: &'static str,
    }
    ok(&Index {
        service: "unlearn",
        version: env!("CARGO_PKG_VERSION"),
    })
}

async fn methods(State(reg): State<Registry>) -> ApiResult {
    ok(&reg.methods())
}

async fn list_workspaces(State(reg): State<Registry>) -> ApiResult {
    ok(&reg.list_workspaces())
}

async fn workspace(State(reg): State<Registry>, Path(w): Path<String>) -> ApiResult {
    ok(&reg.workspace_info(&w)?)
}

/// 201 when the reference models were trained by this call, 200 when the
/// workspace already existed.
async fn create_workspace(State(reg): State<Registry>, body: Bytes) -> ApiResult {
    let spec: WorkspaceSpec = parse(&body)?;
    let existed = reg.workspace_info(&spec.id()?).is_ok();
    let info = blocking(move || reg.create_workspace(&spec)).await?;
    respond(if existed { StatusCode::OK } else { StatusCode::CREATED }, &info)
}

async fn submit_build(State(reg): State<Registry>, Path(w): Path<String>, body: Bytes) -> ApiResult {
    let grid: HyperGrid = parse(&body)?;
    respond(StatusCode::ACCEPTED, &reg.submit_build(&w, &grid)?)
}

#[derive(Deserialize)]
struct ModelsQuery {
    sort: Option<String>,
    method: Option<String>,
}

async fn list_models(State(reg): State<Registry>, Path(w): Path<String>, Query(q): Query<ModelsQuery>) -> ApiResult {
    let query = ListQuery::parse(q.sort.as_deref(), q.method.as_deref()).map_err(|e| {
        let mut err = ApiError::from(e);
        err.body.field_path = Some("sort".into());
        err
    })?;
    ok(&reg.list_models(&w, &query)?)
}

async fn model(State(reg): State<Registry>, Path((w, id)): Path<(String, String)>) -> ApiResult {
    ok(&reg.model(&w, &id)?)
}

/// Either `{"checkpoint": <object or string>, "label": ...}` or a bare
/// checkpoint object.
async fn upload_model(State(reg): State<Registry>, Path(w): Path<String>, body: Bytes) -> ApiResult {
    let value: serde_json::Value = parse(&body)?;
    let (checkpoint, label) = match value {
        serde_json::Value::Object(mut map) if map.contains_key("checkpoint") => {
            let label = match map.remove("label") {
                None | Some(serde_json::Value::Null) => None,
                Some(serde_json::Value::String(s)) => Some(s),
                Some(_) => return Err(ApiError::bad_request("label must be a string", Some("label"))),
            };
            (map.remove("checkpoint").expect("checked above"), label)
        }
        other => (other, None),
    };
    let text = match checkpoint {
        serde_json::Value::String(s) => s,
        v => v.to_string(),
    };
    let record = blocking(move || reg.upload_model(&w, &text, label)).await?;
    respond(StatusCode::CREATED, &record)
}

#[derive(Deserialize)]
struct CompareQuery {
    a: Option<String>,
    b: Option<String>,
}

async fn compare(State(reg): State<Registry>, Path(w): Path<String>, Query(q): Query<CompareQuery>) -> ApiResult {
    let a = required(&q.a, "a")?.to_string();
    let b = required(&q.b, "b")?.to_string();
    let report = blocking(move || reg.compare(&w, &a, &b)).await?;
    ok(&report)
}

#[derive(Deserialize)]
struct AttackQuery {
    model: Option<String>,
    stat: Option<String>,
    dir: Option<String>,
}

/// Without `stat` and `dir` the worst-case sweep is returned.
async fn attack(State(reg): State<Registry>, Path(w): Path<String>, Query(q): Query<AttackQuery>) -> ApiResult {
    let model = required(&q.model, "model")?.to_string();
    let stat: Option<Statistic> = match q.stat.as_deref() {
        None | Some("") => None,
        Some(s) => Some(s.parse().map_err(|e: unlearn_core::Error| ApiError::bad_request(e.to_string(), Some("stat")))?),
    };
    let dir: Option<AttackDirection> = match q.dir.as_deref() {
        None | Some("") => None,
        Some(s) => Some(s.parse().map_err(|e: unlearn_core::Error| ApiError::bad_request(e.to_string(), Some("dir")))?),
    };
    let detail = blocking(move || {
        let first = reg.attack_detail(&w, &model, stat.unwrap_or(Statistic::Confidence), dir.unwrap_or(AttackDirection::GeqIsRetrained))?;
        let wc = first.worst_case;
        let (s, d) = (stat.unwrap_or(wc.statistic), dir.unwrap_or(wc.direction));
        if (s, d) == (first.statistic, first.direction) {
            Ok(first)
        } else {
            reg.attack_detail(&w, &model, s, d)
        }
    })
    .await?;
    ok(&detail)
}

async fn jobs(State(reg): State<Registry>) -> ApiResult {
    ok(&reg.jobs())
}

async fn job(State(reg): State<Registry>, Path(id): Path<String>) -> ApiResult {
    ok(&reg.job(&id)?)
}

struct Cursor {
    registry: Registry,
    job_id: String,
    next: usize,
    finished: bool,
}

/// One `progress` event per epoch record, then a final `status` event with
/// the job's terminal status.
async fn job_events(
    State(reg): State<Registry>,
    Path(id): Path<String>,
) -> Result<Sse<impl Stream<Item = Result<Event, Infallible>>>, ApiError> {
    reg.job(&id)?;
    let start = Cursor {
        registry: reg,
        job_id: id,
        next: 0,
        finished: false,
    };
    let batches = stream::unfold(start, |mut cur| async move {
        if cur.finished {
            return None;
        }
        let (reg, id, from) = (cur.registry.clone(), cur.job_id.clone(), cur.next);
        let polled = tokio::task::spawn_blocking(move || {
            let (events, state) = reg.job_events(&id, from, EVENT_POLL)?;
            let status = if state.is_terminal() { Some(reg.job(&id)?) } else { None };
            Ok::<_, unlearn_core::Error>((events, status))
        })
        .await;
        let mut out = Vec::new();
        match polled {
            Ok(Ok((events, status))) => {
                cur.next += events.len();
                for e in &events {
                    out.push(Event::default().event("progress").data(serde_json::to_string(e).unwrap_or_default()));
                }
                // Events recorded between the poll and the state check are
                // picked up on the next round before finishing.
                if let Some(status) = status.filter(|_| events.is_empty()) {
                    out.push(Event::default().event("status").data(serde_json::to_string(&status).unwrap_or_default()));
                    cur.finished = true;
                }
            }
            Ok(Err(e)) => {
                out.push(Event::default().event("error").data(e.to_string()));
                cur.finished = true;
            }
            Err(e) => {
                out.push(Event::default().event("error").data(e.to_string()));
                cur.finished = true;
            }
        }
        Some((stream::iter(out.into_iter().map(Ok)), cur))
    });
    Ok(Sse::new(batches.flatten()).keep_alive(KeepAlive::default()))
}
