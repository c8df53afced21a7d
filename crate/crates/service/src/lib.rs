//! HTTP session service for stepwise exploration.
//!
//! A session holds named frames and an append-only step log. Each step runs
//! one operation over stored frames, stores the output under a new name and
//! returns a result sample together with the v1 explanation report.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex as SyncMutex, RwLock};
use std::time::{Duration, Instant};

use axum::extract::{DefaultBodyLimit, Multipart, Path as UrlPath, Request, State};
use axum::http::{header, HeaderValue, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use eda_explain::engine::{explain_step, ExplainConfig};
use eda_explain::frame::{read_csv_path, read_csv_str, write_csv, Cell, CsvOptions, DType, DataFrame};
use eda_explain::measure::SamplingConfig;
use eda_explain::ops::{make_step, parse_operation_any, ExploratoryStep};
use eda_explain::render::report_json;
use eda_explain::skyline::RankWeights;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value as JsonValue};
use thiserror::Error;
use tokio::sync::{oneshot, Mutex};
use tower_http::cors::{Any, CorsLayer};

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    /// Idle time after which a session is evicted.
    pub ttl: Duration,
    /// Request body cap for uploads, in bytes.
    pub upload_cap: usize,
    /// How long a step request waits before answering 202.
    pub step_timeout: Duration,
    pub bearer_token: Option<String>,
    /// Allowed CORS origin; any origin when unset.
    pub cors_origin: Option<String>,
    /// Sessions are written here on shutdown and restored on start.
    pub snapshot_dir: Option<PathBuf>,
    pub sample_rows: usize,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            ttl: Duration::from_secs(3600),
            upload_cap: 64 * 1024 * 1024,
            step_timeout: Duration::from_secs(30),
            bearer_token: None,
            cors_origin: None,
            snapshot_dir: None,
            sample_rows: 50,
        }
    }
}

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("snapshot I/O at {path}")]
    Snapshot {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("snapshot data: {0}")]
    SnapshotData(String),
    #[error("invalid CORS origin '{0}'")]
    CorsOrigin(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// An error response: status plus a machine-readable code.
#[derive(Debug, Clone)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: &'static str,
    pub message: String,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self {
            status,
            code,
            message: message.into(),
        }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "bad_request", message)
    }

    fn not_found(what: &str, name: &str) -> Self {
        Self::new(StatusCode::NOT_FOUND, "not_found", format!("unknown {what} '{name}'"))
    }

    fn conflict(message: impl Into<String>) -> Self {
        Self::new(StatusCode::CONFLICT, "conflict", message)
    }

    fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = json!({ "error": { "code": self.code, "message": self.message } });
        (self.status, Json(body)).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub index: usize,
    pub op: String,
    pub inputs: Vec<String>,
    pub output: String,
    pub status: String,
    pub explanation_count: usize,
    pub report: JsonValue,
}

#[derive(Debug, Clone)]
enum Pending {
    Running,
    Done(Result<JsonValue, ApiError>),
}

#[derive(Default)]
struct SessionData {
    frames: HashMap<String, Arc<DataFrame>>,
    log: Vec<HistoryEntry>,
}

struct Session {
    /// Single writer: held for the whole lifetime of a step.
    data: Arc<Mutex<SessionData>>,
    pending: SyncMutex<HashMap<String, Pending>>,
    last_access: SyncMutex<Instant>,
}

impl Session {
    fn new(data: SessionData) -> Self {
        Self {
            data: Arc::new(Mutex::new(data)),
            pending: SyncMutex::new(HashMap::new()),
            last_access: SyncMutex::new(Instant::now()),
        }
    }

    fn touch(&self) {
        *self.last_access.lock().unwrap() = Instant::now();
    }
}

struct Inner {
    config: ServiceConfig,
    sessions: RwLock<HashMap<String, Arc<Session>>>,
}

/// Shared service state. Cloning is cheap.
#[derive(Clone)]
pub struct AppState(Arc<Inner>);

impl AppState {
    pub fn new(config: ServiceConfig) -> Self {
        Self(Arc::new(Inner {
            config,
            sessions: RwLock::new(HashMap::new()),
        }))
    }

    pub fn config(&self) -> &ServiceConfig {
        &self.0.config
    }

    pub fn session_count(&self) -> usize {
        self.0.sessions.read().unwrap().len()
    }

    fn session(&self, id: &str) -> ApiResult<Arc<Session>> {
        let s = self
            .0
            .sessions
            .read()
            .unwrap()
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::not_found("session", id))?;
        s.touch();
        Ok(s)
    }

    fn insert_session(&self, id: String, data: SessionData) {
        self.0.sessions.write().unwrap().insert(id, Arc::new(Session::new(data)));
    }

    /// Drops sessions idle for longer than the TTL as of `now`. Returns how
    /// many were removed.
    pub fn evict_expired(&self, now: Instant) -> usize {
        let ttl = self.0.config.ttl;
        let mut map = self.0.sessions.write().unwrap();
        let before = map.len();
        map.retain(|_, s| now.saturating_duration_since(*s.last_access.lock().unwrap()) <= ttl);
        before - map.len()
    }

    /// Writes every session to `dir/<id>/`: one CSV per frame, a schema file
    /// and the history.
    pub async fn snapshot(&self, dir: &Path) -> Result<(), ServiceError> {
        let sessions: Vec<(String, Arc<Session>)> = self
            .0
            .sessions
            .read()
            .unwrap()
            .iter()
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect();
        for (id, s) in sessions {
            let data = s.data.lock().await;
            let sdir = dir.join(&id);
            let io = |path: &Path, source| ServiceError::Snapshot {
                path: path.display().to_string(),
                source,
            };
            std::fs::create_dir_all(&sdir).map_err(|e| io(&sdir, e))?;
            let mut schemas = serde_json::Map::new();
            for (i, (name, frame)) in data.frames.iter().enumerate() {
                let file = format!("frame_{i}.csv");
                let path = sdir.join(&file);
                let f = std::fs::File::create(&path).map_err(|e| io(&path, e))?;
                write_csv(frame, f).map_err(|e| ServiceError::SnapshotData(e.to_string()))?;
                schemas.insert(name.clone(), json!({ "file": file, "schema": frame.schema() }));
            }
            let meta = json!({ "frames": schemas, "history": data.log });
            let path = sdir.join("session.json");
            std::fs::write(&path, serde_json::to_vec_pretty(&meta).expect("serializable"))
                .map_err(|e| io(&path, e))?;
        }
        Ok(())
    }

    /// Loads sessions written by [`AppState::snapshot`]. A missing directory
    /// restores nothing.
    pub fn restore(&self, dir: &Path) -> Result<usize, ServiceError> {
        if !dir.exists() {
            return Ok(0);
        }
        let mut n = 0;
        for entry in std::fs::read_dir(dir)? {
            let sdir = entry?.path();
            let meta_path = sdir.join("session.json");
            if !meta_path.is_file() {
                continue;
            }
            let id = sdir
                .file_name()
                .and_then(|s| s.to_str())
                .ok_or_else(|| ServiceError::SnapshotData("bad session directory".into()))?
                .to_string();
            let text = std::fs::read_to_string(&meta_path)?;
            let meta: JsonValue =
                serde_json::from_str(&text).map_err(|e| ServiceError::SnapshotData(e.to_string()))?;
            let mut data = SessionData::default();
            if let Some(frames) = meta["frames"].as_object() {
                for (name, spec) in frames {
                    let schema: Vec<(String, DType)> = serde_json::from_value(spec["schema"].clone())
                        .map_err(|e| ServiceError::SnapshotData(e.to_string()))?;
                    let file = spec["file"]
                        .as_str()
                        .ok_or_else(|| ServiceError::SnapshotData(format!("frame '{name}' has no file")))?;
                    let opts = CsvOptions {
                        dtypes: schema.into_iter().collect(),
                        ..CsvOptions::default()
                    };
                    let frame = read_csv_path(sdir.join(file), &opts)
                        .map_err(|e| ServiceError::SnapshotData(error_chain(&e)))?
                        .renamed(name.clone());
                    data.frames.insert(name.clone(), Arc::new(frame));
                }
            }
            data.log = serde_json::from_value(meta["history"].clone())
                .map_err(|e| ServiceError::SnapshotData(e.to_string()))?;
            self.insert_session(id, data);
            n += 1;
        }
        Ok(n)
    }
}

fn error_chain(e: &dyn std::error::Error) -> String {
    let mut s = e.to_string();
    let mut cur = e.source();
    while let Some(c) = cur {
        s.push_str(": ");
        s.push_str(&c.to_string());
        cur = c.source();
    }
    s
}

/// Engine knobs a step request may set. Everything is optional.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepConfig {
    pub measure: Option<String>,
    pub bins: Option<Vec<usize>>,
    pub top_k: Option<usize>,
    pub weights: Option<[f64; 2]>,
    pub columns: Option<Vec<String>>,
    pub sample_size: Option<usize>,
    pub seed: Option<u64>,
    /// Forces exact scoring even on large inputs.
    #[serde(default)]
    pub exact: bool,
    pub many_to_one: Option<bool>,
}

impl StepConfig {
    pub fn to_explain_config(&self, step: &ExploratoryStep) -> Result<ExplainConfig, String> {
        let mut cfg = ExplainConfig {
            measure: self.measure.clone(),
            restrict: self.columns.clone(),
            top_k: self.top_k,
            ..ExplainConfig::default()
        };
        if let Some(bins) = &self.bins {
            if bins.is_empty() || bins.contains(&0) {
                return Err("bins must be a non-empty list of positive counts".into());
            }
            cfg.partitions.bin_counts = bins.clone();
        }
        if let Some(m2o) = self.many_to_one {
            cfg.partitions.many_to_one = m2o;
        }
        if let Some([wi, wc]) = self.weights {
            cfg.weights = RankWeights::new(wi, wc).map_err(|e| e.to_string())?;
        }
        if self.top_k == Some(0) {
            return Err("top_k must be at least 1".into());
        }
        let size = self.sample_size.unwrap_or(5000);
        if size == 0 {
            return Err("sample_size must be at least 1".into());
        }
        let seed = self.seed.unwrap_or(0);
        cfg.sampling = if self.exact {
            SamplingConfig::exact()
        } else {
            SamplingConfig::auto(step, size, seed)
        };
        cfg.registry
            .resolve(cfg.measure.as_deref(), step.op())
            .map_err(|e| e.to_string())?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepRequest {
    /// DSL text or the operation's JSON form.
    pub op: JsonValue,
    pub inputs: Vec<String>,
    pub output: String,
    #[serde(default)]
    pub config: StepConfig,
}

fn cell_json(c: Cell) -> JsonValue {
    match c {
        Cell::Null => JsonValue::Null,
        Cell::Number(v) => json!(v),
        Cell::Text(s) => json!(&*s),
    }
}

/// Columns, dtypes, row count and the first `rows` rows.
pub fn frame_summary(name: &str, frame: &DataFrame, rows: usize) -> JsonValue {
    let sample: Vec<Vec<JsonValue>> = (0..frame.row_count().min(rows))
        .map(|r| frame.row(r).into_iter().map(cell_json).collect())
        .collect();
    json!({
        "name": name,
        "columns": frame
            .schema()
            .into_iter()
            .map(|(n, t)| json!({ "name": n, "dtype": t }))
            .collect::<Vec<_>>(),
        "row_count": frame.row_count(),
        "sample": sample,
    })
}

fn valid_name(name: &str) -> bool {
    !name.trim().is_empty() && name.len() <= 200
}

async fn healthz() -> Json<JsonValue> {
    Json(json!({ "status": "ok" }))
}

async fn create_session(State(state): State<AppState>) -> (StatusCode, Json<JsonValue>) {
    let id = uuid::Uuid::new_v4().simple().to_string();
    state.insert_session(id.clone(), SessionData::default());
    tracing::info!(session = %id, "session created");
    (StatusCode::CREATED, Json(json!({ "id": id })))
}

async fn upload_frame(
    State(state): State<AppState>,
    UrlPath(id): UrlPath<String>,
    mut multipart: Multipart,
) -> ApiResult<(StatusCode, Json<JsonValue>)> {
    let session = state.session(&id)?;
    let mut name: Option<String> = None;
    let mut file_name: Option<String> = None;
    let mut bytes: Option<Vec<u8>> = None;
    let part_err = |e: axum::extract::multipart::MultipartError| {
        let status = e.status();
        let code = if status == StatusCode::PAYLOAD_TOO_LARGE { "too_large" } else { "bad_request" };
        ApiError::new(status, code, e.body_text())
    };
    while let Some(field) = multipart.next_field().await.map_err(part_err)? {
        match field.name() {
            Some("name") => name = Some(field.text().await.map_err(part_err)?),
            Some("file") => {
                file_name = field.file_name().map(str::to_string);
                bytes = Some(field.bytes().await.map_err(part_err)?.to_vec());
            }
            _ => {}
        }
    }
    let bytes = bytes.ok_or_else(|| ApiError::bad_request("multipart field 'file' is required"))?;
    let name = name
        .or_else(|| {
            file_name.map(|f| {
                Path::new(&f)
                    .file_stem()
                    .map_or(f.clone(), |s| s.to_string_lossy().into_owned())
            })
        })
        .ok_or_else(|| ApiError::bad_request("multipart field 'name' is required"))?;
    if !valid_name(&name) {
        return Err(ApiError::bad_request("frame name must be 1 to 200 non-blank characters"));
    }
    let text = String::from_utf8(bytes).map_err(|_| ApiError::bad_request("CSV must be UTF-8"))?;
    let frame = read_csv_str(&name, &text, &CsvOptions::default())
        .map_err(|e| ApiError::bad_request(e.to_string()))?;

    let mut data = session.data.lock().await;
    if data.frames.contains_key(&name) {
        return Err(ApiError::conflict(format!("frame '{name}' already exists")));
    }
    let summary = frame_summary(&name, &frame, state.config().sample_rows);
    data.frames.insert(name, Arc::new(frame));
    Ok((StatusCode::CREATED, Json(summary)))
}

/// Runs the step and commits it. Called with the session's write lock held.
fn run_step(
    data: &mut SessionData,
    step: ExploratoryStep,
    cfg: &ExplainConfig,
    req: &StepRequest,
    sample_rows: usize,
) -> ApiResult<JsonValue> {
    let result = explain_step(&step, cfg).map_err(|e| ApiError::bad_request(e.to_string()))?;
    let diagnostics = serde_json::to_value(&result.diagnostics).map_err(|e| ApiError::internal(e.to_string()))?;
    let report = report_json(&step, &result.explanations, Some(diagnostics));
    let output = step.output().clone().renamed(req.output.clone());
    let index = data.log.len();
    let entry = HistoryEntry {
        index,
        op: step.op().to_string(),
        inputs: req.inputs.clone(),
        output: req.output.clone(),
        status: report["status"].as_str().unwrap_or_default().to_string(),
        explanation_count: result.explanations.len(),
        report: report.clone(),
    };
    let body = json!({
        "index": index,
        "output": frame_summary(&req.output, &output, sample_rows),
        "report": report,
    });
    data.frames.insert(req.output.clone(), Arc::new(output));
    data.log.push(entry);
    Ok(body)
}

async fn apply_step(
    State(state): State<AppState>,
    UrlPath(id): UrlPath<String>,
    body: Result<Json<StepRequest>, axum::extract::rejection::JsonRejection>,
) -> ApiResult<Response> {
    let session = state.session(&id)?;
    let Json(req) = body.map_err(|e| ApiError::bad_request(e.body_text()))?;
    if !valid_name(&req.output) {
        return Err(ApiError::bad_request("output name must be 1 to 200 non-blank characters"));
    }
    let op_text = match &req.op {
        JsonValue::String(s) => s.clone(),
        v @ JsonValue::Object(_) => v.to_string(),
        _ => return Err(ApiError::bad_request("op must be a DSL string or an operation object")),
    };
    let op = parse_operation_any(&op_text).map_err(|e| ApiError::bad_request(e.to_string()))?;

    let mut data = session.data.clone().lock_owned().await;
    if data.frames.contains_key(&req.output) {
        return Err(ApiError::conflict(format!("frame '{}' already exists", req.output)));
    }
    let inputs = req
        .inputs
        .iter()
        .map(|n| {
            data.frames
                .get(n)
                .cloned()
                .ok_or_else(|| ApiError::not_found("frame", n))
        })
        .collect::<ApiResult<Vec<_>>>()?;
    let step = make_step(op, inputs).map_err(|e| ApiError::bad_request(e.to_string()))?;
    let cfg = req.config.to_explain_config(&step).map_err(ApiError::bad_request)?;

    let token = uuid::Uuid::new_v4().simple().to_string();
    session.pending.lock().unwrap().insert(token.clone(), Pending::Running);
    let (tx, rx) = oneshot::channel();
    let sample_rows = state.config().sample_rows;
    let task_session = session.clone();
    let task_token = token.clone();
    tokio::task::spawn_blocking(move || {
        let out = run_step(&mut data, step, &cfg, &req, sample_rows);
        drop(data);
        task_session
            .pending
            .lock()
            .unwrap()
            .insert(task_token, Pending::Done(out.clone()));
        let _ = tx.send(out);
    });

    match tokio::time::timeout(state.config().step_timeout, rx).await {
        Ok(Ok(out)) => {
            session.pending.lock().unwrap().remove(&token);
            let body = out?;
            Ok((StatusCode::OK, Json(body)).into_response())
        }
        Ok(Err(_)) => Err(ApiError::internal("step computation aborted")),
        Err(_) => {
            let poll = format!("/sessions/{id}/steps/{token}");
            let mut resp = (
                StatusCode::ACCEPTED,
                Json(json!({ "status": "pending", "token": token, "poll": poll })),
            )
                .into_response();
            resp.headers_mut().insert(header::RETRY_AFTER, HeaderValue::from_static("5"));
            if let Ok(v) = HeaderValue::from_str(&poll) {
                resp.headers_mut().insert(header::LOCATION, v);
            }
            Ok(resp)
        }
    }
}

async fn poll_step(
    State(state): State<AppState>,
    UrlPath((id, token)): UrlPath<(String, String)>,
) -> ApiResult<Response> {
    let session = state.session(&id)?;
    let pending = session.pending.lock().unwrap().get(&token).cloned();
    match pending {
        None => Err(ApiError::not_found("step token", &token)),
        Some(Pending::Running) => Ok((
            StatusCode::ACCEPTED,
            [(header::RETRY_AFTER, "5")],
            Json(json!({ "status": "pending", "token": token })),
        )
            .into_response()),
        Some(Pending::Done(out)) => Ok((StatusCode::OK, Json(out?)).into_response()),
    }
}

async fn history(State(state): State<AppState>, UrlPath(id): UrlPath<String>) -> ApiResult<Json<JsonValue>> {
    let session = state.session(&id)?;
    let data = session.data.lock().await;
    let mut frames: Vec<JsonValue> = data
        .frames
        .iter()
        .map(|(n, f)| frame_summary(n, f, 0))
        .collect();
    frames.sort_by(|a, b| a["name"].as_str().cmp(&b["name"].as_str()));
    Ok(Json(json!({ "id": id, "frames": frames, "steps": data.log })))
}

async fn require_token(State(state): State<AppState>, req: Request, next: Next) -> Response {
    if let Some(token) = &state.config().bearer_token {
        if req.uri().path() != "/healthz" && req.method() != axum::http::Method::OPTIONS {
            let ok = req
                .headers()
                .get(header::AUTHORIZATION)
                .and_then(|v| v.to_str().ok())
                .and_then(|v| v.strip_prefix("Bearer "))
                .is_some_and(|t| t == token);
            if !ok {
                return ApiError::new(StatusCode::UNAUTHORIZED, "unauthorized", "missing or invalid bearer token")
                    .into_response();
            }
        }
    }
    next.run(req).await
}

/// The full router, including CORS, the upload cap and the token check.
pub fn router(state: AppState) -> Result<Router, ServiceError> {
    let cfg = state.config().clone();
    let cors = match &cfg.cors_origin {
        Some(o) => CorsLayer::new().allow_origin(
            o.parse::<HeaderValue>()
                .map_err(|_| ServiceError::CorsOrigin(o.clone()))?,
        ),
        None => CorsLayer::new().allow_origin(Any),
    }
    .allow_methods(Any)
    .allow_headers(Any);
    Ok(Router::new()
        .route("/healthz", get(healthz))
        .route("/sessions", post(create_session))
        .route("/sessions/:id/frames", post(upload_frame))
        .route("/sessions/:id/steps", post(apply_step))
        .route("/sessions/:id/steps/:token", get(poll_step))
        .route("/sessions/:id/history", get(history))
        .layer(DefaultBodyLimit::max(cfg.upload_cap))
        .layer(middleware::from_fn_with_state(state.clone(), require_token))
        .layer(cors)
        .with_state(state))
}

/// Serves until Ctrl-C, evicting idle sessions in the background and
/// writing a snapshot on the way out when configured.
pub async fn serve(config: ServiceConfig, addr: SocketAddr) -> Result<(), ServiceError> {
    let state = AppState::new(config);
    if let Some(dir) = &state.config().snapshot_dir {
        let n = state.restore(dir)?;
        tracing::info!(sessions = n, "restored snapshot");
    }
    let app = router(state.clone())?;
    let sweeper = {
        let state = state.clone();
        let every = (state.config().ttl / 4).clamp(Duration::from_millis(100), Duration::from_secs(60));
        tokio::spawn(async move {
            let mut tick = tokio::time::interval(every);
            loop {
                tick.tick().await;
                let n = state.evict_expired(Instant::now());
                if n > 0 {
                    tracing::info!(evicted = n, "expired sessions");
                }
            }
        })
    };
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!(%addr, "listening");
    axum::serve(listener, app)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    sweeper.abort();
    if let Some(dir) = &state.config().snapshot_dir {
        state.snapshot(dir).await?;
        tracing::info!(dir = %dir.display(), "snapshot written");
    }
    Ok(())
}
