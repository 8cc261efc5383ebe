//! Local HTTP API with server-sent event streams for the web UI.
//!
//! All device traffic goes through one [`DeviceHandle`] worker; training runs
//! on its own [`Trainer`] thread. Errors come back as
//! `{"error": {"code", "message", "retryable"}}`.

mod device;
mod trainer;

pub use device::{DeviceHandle, DeviceStreams, HeatmapEvent};
pub use trainer::{Control, Phase, TrainSnapshot, Trainer};

use std::convert::Infallible;
use std::net::SocketAddr;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use axum::body::Bytes;
use axum::extract::{Query, State};
use axum::http::{header, StatusCode};
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post, put};
use axum::{Json, Router};
use futures::Stream;
use serde::{Deserialize, Serialize};
use serde_json::json;
use tinyvis_core::codec::{emit_config, parse_config};
use tinyvis_core::dataset::{save_capture, ProjectFolder, CONFIG_FILE, HEADER_DIR};
use tinyvis_core::protocol::transport::Connection;
use tinyvis_core::protocol::{ClientError, DeviceClient, SdEntry};
use tokio::sync::broadcast;

use crate::project::{evaluate, export, prepare_training, EvalSet, TrainOverrides};
use crate::render::size_hint;

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    code: &'static str,
    message: String,
    retryable: bool,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self { status, code, message: message.into(), retryable: false }
    }

    pub fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "bad_request", message)
    }

    pub fn conflict(message: impl Into<String>) -> Self {
        Self::new(StatusCode::CONFLICT, "conflict", message)
    }

    pub fn no_device() -> Self {
        Self::new(StatusCode::CONFLICT, "no_device", "service was started without --endpoint")
    }
}

impl From<ClientError> for ApiError {
    fn from(e: ClientError) -> Self {
        let (status, code) = match &e {
            ClientError::Discarded(_) => (StatusCode::SERVICE_UNAVAILABLE, "discarded"),
            ClientError::Timeout(_) => (StatusCode::GATEWAY_TIMEOUT, "timeout"),
            ClientError::Device(_) => (StatusCode::BAD_GATEWAY, "device_error"),
            ClientError::Protocol(_) => (StatusCode::BAD_REQUEST, "protocol"),
            ClientError::Disconnected | ClientError::Io(_) => (StatusCode::SERVICE_UNAVAILABLE, "disconnected"),
            ClientError::Unexpected(_) => (StatusCode::BAD_GATEWAY, "unexpected"),
        };
        Self { status, code, retryable: e.is_retryable(), message: e.to_string() }
    }
}

impl From<anyhow::Error> for ApiError {
    fn from(e: anyhow::Error) -> Self {
        Self::new(StatusCode::UNPROCESSABLE_ENTITY, "failed", format!("{e:#}"))
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = json!({"error": {"code": self.code, "message": self.message, "retryable": self.retryable}});
        (self.status, Json(body)).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

pub struct AppState {
    pub project: ProjectFolder,
    device: Option<DeviceHandle>,
    streams: DeviceStreams,
    trainer: Mutex<Option<Trainer>>,
    snapshot: Arc<Mutex<TrainSnapshot>>,
    train_events: broadcast::Sender<TrainSnapshot>,
}

impl AppState {
    pub fn new(project: ProjectFolder, device: Option<Connection>) -> Arc<Self> {
        let streams = DeviceStreams::new();
        let device = device.map(|c| DeviceHandle::spawn(DeviceClient::new(c), streams.clone()));
        Arc::new(Self {
            project,
            device,
            streams,
            trainer: Mutex::new(None),
            snapshot: Arc::new(Mutex::new(TrainSnapshot::default())),
            train_events: broadcast::channel(256).0,
        })
    }

    fn device(&self) -> ApiResult<&DeviceHandle> {
        self.device.as_ref().ok_or_else(ApiError::no_device)
    }

    pub fn snapshot(&self) -> TrainSnapshot {
        self.snapshot.lock().expect("snapshot lock").clone()
    }

    fn project_op<T: Send + 'static>(
        self: &Arc<Self>,
        f: impl FnOnce(&ProjectFolder) -> anyhow::Result<T> + Send + 'static,
    ) -> impl std::future::Future<Output = ApiResult<T>> {
        let project = self.project.clone();
        async move {
            tokio::task::spawn_blocking(move || f(&project))
                .await
                .map_err(|e| ApiError::from(anyhow::anyhow!("worker panicked: {e}")))?
                .map_err(ApiError::from)
        }
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/api/health", get(health))
        .route("/api/config", get(get_config).put(put_config))
        .route("/api/hint", get(hint))
        .route("/api/dataset", get(dataset))
        .route("/api/capture", post(capture_upload))
        .route("/api/capture/device", post(capture_device))
        .route("/api/sd/list", get(sd_list))
        .route("/api/sd/file", get(sd_read).put(sd_write).delete(sd_delete))
        .route("/api/sd/dir", axum::routing::delete(sd_rmdir))
        .route("/api/train", get(train_status))
        .route("/api/train/start", post(train_start))
        .route("/api/train/pause", post(train_pause))
        .route("/api/train/resume", post(train_resume))
        .route("/api/train/stop", post(train_stop))
        .route("/api/train/events", get(train_events))
        .route("/api/confusion", get(confusion))
        .route("/api/export", post(export_weights))
        .route("/api/heatmap/on", post(heatmap_on))
        .route("/api/heatmap/off", post(heatmap_off))
        .route("/api/heatmap/latest", get(heatmap_latest))
        .route("/api/heatmap/events", get(heatmap_events))
        .route("/api/device/events", get(device_events))
        .route("/api/device/menu", put(menu_key))
        .with_state(state)
}

pub async fn serve(addr: SocketAddr, state: Arc<AppState>) -> anyhow::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(state.clone()))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    let trainer = state.trainer.lock().expect("trainer lock").take();
    if let Some(t) = trainer {
        tokio::task::spawn_blocking(move || t.stop()).await?;
    }
    Ok(())
}

async fn health(State(st): State<Arc<AppState>>) -> Json<serde_json::Value> {
    Json(json!({"ok": true, "device": st.device.is_some(), "project": st.project.root}))
}

fn json_text(text: String) -> Response {
    ([(header::CONTENT_TYPE, "application/json")], text).into_response()
}

fn device_config_path() -> String {
    format!("/{HEADER_DIR}/{CONFIG_FILE}")
}

#[derive(Deserialize, Default)]
struct ConfigQuery {
    /// `device` reads (GET) or also writes (PUT) `/header/config.json` on
    /// the device.
    source: Option<String>,
    sync: Option<String>,
}

async fn get_config(State(st): State<Arc<AppState>>, Query(q): Query<ConfigQuery>) -> ApiResult<Response> {
    if q.source.as_deref() == Some("device") {
        let text = st.device()?.call(|c| c.read_text(&device_config_path())).await?;
        let cfg = parse_config(&text).map_err(|e| ApiError::from(anyhow::Error::from(e)))?;
        st.project_op(move |p| Ok(p.save_config(&cfg)?)).await?;
    }
    let cfg = st.project_op(|p| Ok(p.load_config()?)).await?;
    Ok(json_text(emit_config(&cfg)))
}

async fn put_config(State(st): State<Arc<AppState>>, Query(q): Query<ConfigQuery>, body: String) -> ApiResult<Response> {
    let cfg = parse_config(&body).map_err(|e| ApiError::bad_request(e.to_string()))?;
    let text = emit_config(&cfg);
    st.project_op(move |p| Ok(p.save_config(&cfg)?)).await?;
    if q.sync.as_deref() == Some("device") {
        let bytes = text.clone().into_bytes();
        st.device()?.call(move |c| c.write_file(&device_config_path(), &bytes)).await?;
    }
    Ok(json_text(text))
}

#[derive(Deserialize)]
#[serde(rename_all = "camelCase")]
struct HintQuery {
    input_size: Option<usize>,
    grayscale: Option<bool>,
    num_classes: Option<usize>,
}

async fn hint(State(st): State<Arc<AppState>>, Query(q): Query<HintQuery>) -> ApiResult<Json<crate::render::SizeHint>> {
    let cfg = st.project.load_config().ok();
    let size = q.input_size.or(cfg.as_ref().map(|c| c.input_size)).unwrap_or(64);
    let gray = q.grayscale.or(cfg.as_ref().map(|c| c.use_grayscale)).unwrap_or(false);
    let classes = q.num_classes.or(cfg.as_ref().map(|c| c.num_classes)).unwrap_or(3);
    Ok(Json(size_hint(size, gray, classes).map_err(|e| ApiError::bad_request(e.to_string()))?))
}

#[derive(Serialize)]
struct DatasetInfo {
    labels: Vec<String>,
    counts: Vec<usize>,
}

fn dataset_info(p: &ProjectFolder) -> anyhow::Result<DatasetInfo> {
    let cfg = p.load_config()?;
    Ok(DatasetInfo { counts: p.class_counts(&cfg), labels: cfg.class_labels })
}

async fn dataset(State(st): State<Arc<AppState>>) -> ApiResult<Json<DatasetInfo>> {
    Ok(Json(st.project_op(dataset_info).await?))
}

#[derive(Deserialize)]
struct LabelQuery {
    label: String,
    width: Option<u32>,
    height: Option<u32>,
    quality: Option<u8>,
}

#[derive(Serialize)]
struct Captured {
    path: String,
    label: String,
    counts: Vec<usize>,
}

fn store_capture(p: &ProjectFolder, bytes: &[u8], label: &str) -> anyhow::Result<Captured> {
    let cfg = p.load_config()?;
    let path = save_capture(bytes, label, &p.root, &cfg.class_labels)?;
    Ok(Captured { path: path.display().to_string(), label: label.to_string(), counts: p.class_counts(&cfg) })
}

async fn capture_upload(
    State(st): State<Arc<AppState>>,
    Query(q): Query<LabelQuery>,
    body: Bytes,
) -> ApiResult<Json<Captured>> {
    if body.is_empty() {
        return Err(ApiError::bad_request("empty image body"));
    }
    Ok(Json(st.project_op(move |p| store_capture(p, &body, &q.label)).await?))
}

async fn capture_device(State(st): State<Arc<AppState>>, Query(q): Query<LabelQuery>) -> ApiResult<Json<Captured>> {
    let (w, h, quality) = (q.width.unwrap_or(320), q.height.unwrap_or(240), q.quality.unwrap_or(12));
    let jpeg = st.device()?.call(move |c| c.capture(w, h, quality)).await?;
    Ok(Json(st.project_op(move |p| store_capture(p, &jpeg, &q.label)).await?))
}

#[derive(Deserialize)]
struct PathQuery {
    path: String,
    #[serde(default)]
    text: bool,
}

async fn sd_list(State(st): State<Arc<AppState>>, Query(q): Query<PathQuery>) -> ApiResult<Json<Vec<SdEntry>>> {
    Ok(Json(st.device()?.call(move |c| c.list(&q.path)).await?))
}

fn content_type(path: &str) -> &'static str {
    let lower = path.to_ascii_lowercase();
    if lower.ends_with(".jpg") || lower.ends_with(".jpeg") {
        "image/jpeg"
    } else if lower.ends_with(".png") {
        "image/png"
    } else if lower.ends_with(".json") {
        "application/json"
    } else {
        "application/octet-stream"
    }
}

async fn sd_read(State(st): State<Arc<AppState>>, Query(q): Query<PathQuery>) -> ApiResult<Response> {
    let dev = st.device()?;
    if q.text {
        let text = dev.call(move |c| c.read_text(&q.path)).await?;
        return Ok(([(header::CONTENT_TYPE, "text/plain; charset=utf-8")], text).into_response());
    }
    let ct = content_type(&q.path);
    let bytes = dev.call(move |c| c.read_file(&q.path)).await?;
    Ok(([(header::CONTENT_TYPE, ct)], bytes).into_response())
}

async fn sd_write(State(st): State<Arc<AppState>>, Query(q): Query<PathQuery>, body: Bytes) -> ApiResult<Json<serde_json::Value>> {
    let msg = st.device()?.call(move |c| c.write_file(&q.path, &body)).await?;
    Ok(Json(json!({"message": msg})))
}

async fn sd_delete(State(st): State<Arc<AppState>>, Query(q): Query<PathQuery>) -> ApiResult<Json<serde_json::Value>> {
    let msg = st.device()?.call(move |c| c.delete(&q.path)).await?;
    Ok(Json(json!({"message": msg})))
}

async fn sd_rmdir(State(st): State<Arc<AppState>>, Query(q): Query<PathQuery>) -> ApiResult<Json<serde_json::Value>> {
    let msg = st.device()?.call(move |c| c.rmdir(&q.path)).await?;
    Ok(Json(json!({"message": msg})))
}

async fn train_status(State(st): State<Arc<AppState>>) -> Json<TrainSnapshot> {
    Json(st.snapshot())
}

async fn train_start(State(st): State<Arc<AppState>>, body: Bytes) -> ApiResult<Json<TrainSnapshot>> {
    let overrides: TrainOverrides = if body.iter().all(u8::is_ascii_whitespace) {
        TrainOverrides::default()
    } else {
        serde_json::from_slice(&body).map_err(|e| ApiError::bad_request(e.to_string()))?
    };
    if st.snapshot().phase.is_active() {
        return Err(ApiError::conflict("training already in progress"));
    }
    let setup = st.project_op(move |p| prepare_training(p, &overrides)).await?;
    let mut slot = st.trainer.lock().expect("trainer lock");
    if st.snapshot().phase.is_active() {
        return Err(ApiError::conflict("training already in progress"));
    }
    let old = slot.replace(Trainer::start(setup, st.project.clone(), st.snapshot.clone(), st.train_events.clone()));
    drop(slot);
    if let Some(old) = old {
        // already finished; joining only reaps the thread
        tokio::task::spawn_blocking(move || old.stop());
    }
    Ok(Json(st.snapshot()))
}

/// Sends `c` and waits until the worker reports a phase accepted by `done`.
async fn control(st: &Arc<AppState>, c: Control, done: fn(Phase) -> bool) -> ApiResult<Json<TrainSnapshot>> {
    let sent = st.trainer.lock().expect("trainer lock").as_ref().is_some_and(|t| t.send(c));
    if !sent || !st.snapshot().phase.is_active() {
        return Err(ApiError::conflict("no training in progress"));
    }
    let deadline = Instant::now() + Duration::from_secs(10);
    loop {
        let snap = st.snapshot();
        if done(snap.phase) || !snap.phase.is_active() {
            return Ok(Json(snap));
        }
        if Instant::now() > deadline {
            return Err(ApiError::new(StatusCode::GATEWAY_TIMEOUT, "timeout", "trainer did not respond"));
        }
        tokio::time::sleep(Duration::from_millis(5)).await;
    }
}

async fn train_pause(State(st): State<Arc<AppState>>) -> ApiResult<Json<TrainSnapshot>> {
    control(&st, Control::Pause, |p| p == Phase::Paused).await
}

async fn train_resume(State(st): State<Arc<AppState>>) -> ApiResult<Json<TrainSnapshot>> {
    control(&st, Control::Resume, |p| p == Phase::Running).await
}

async fn train_stop(State(st): State<Arc<AppState>>) -> ApiResult<Json<TrainSnapshot>> {
    let trainer = st.trainer.lock().expect("trainer lock").take();
    let Some(t) = trainer else {
        return Err(ApiError::conflict("no training in progress"));
    };
    tokio::task::spawn_blocking(move || t.stop())
        .await
        .map_err(|e| ApiError::from(anyhow::anyhow!("trainer panicked: {e}")))?;
    Ok(Json(st.snapshot()))
}

fn sse<T: Serialize + Clone + Send + 'static>(
    rx: broadcast::Receiver<T>,
    name: &'static str,
) -> Sse<impl Stream<Item = Result<Event, Infallible>>> {
    let stream = futures::stream::unfold(rx, move |mut rx| async move {
        loop {
            match rx.recv().await {
                Ok(v) => {
                    let ev = Event::default().event(name).json_data(&v).expect("serializable event");
                    return Some((Ok(ev), rx));
                }
                Err(broadcast::error::RecvError::Lagged(n)) => log::debug!("{name} stream lagged by {n}"),
                Err(broadcast::error::RecvError::Closed) => return None,
            }
        }
    });
    Sse::new(stream).keep_alive(KeepAlive::default())
}

async fn train_events(State(st): State<Arc<AppState>>) -> impl IntoResponse {
    sse(st.train_events.subscribe(), "progress")
}

#[derive(Deserialize)]
struct ConfusionQuery {
    set: Option<EvalSet>,
    seed: Option<u64>,
}

async fn confusion(State(st): State<Arc<AppState>>, Query(q): Query<ConfusionQuery>) -> ApiResult<Json<serde_json::Value>> {
    let set = q.set.unwrap_or(EvalSet::Validation);
    let (cm, labels) = st.project_op(move |p| evaluate(p, set, q.seed.unwrap_or(0))).await?;
    Ok(Json(json!({"labels": labels, "counts": cm.counts, "total": cm.total(), "accuracy": cm.accuracy()})))
}

#[derive(Deserialize)]
struct ExportQuery {
    #[serde(default)]
    upload: bool,
}

async fn export_weights(State(st): State<Arc<AppState>>, Query(q): Query<ExportQuery>) -> ApiResult<Json<serde_json::Value>> {
    let out = st.project_op(export).await?;
    let mut uploaded = Vec::new();
    if q.upload {
        let dev = st.device()?.clone();
        let cfg = st.project_op(|p| Ok(p.load_config()?)).await?;
        let files = [
            (format!("/{HEADER_DIR}/{}", cfg.weights_file), std::fs::read(&out.bin).map_err(anyhow::Error::from)?),
            (device_config_path(), emit_config(&cfg).into_bytes()),
        ];
        for (path, bytes) in files {
            let p = path.clone();
            dev.call(move |c| c.write_file(&p, &bytes)).await?;
            uploaded.push(path);
        }
    }
    Ok(Json(json!({"bin": out.bin, "header": out.header, "binBytes": out.bin_bytes, "uploaded": uploaded})))
}

async fn heatmap_on(State(st): State<Arc<AppState>>) -> ApiResult<StatusCode> {
    st.device()?.call(|c| c.heatmap_on()).await?;
    Ok(StatusCode::NO_CONTENT)
}

async fn heatmap_off(State(st): State<Arc<AppState>>) -> ApiResult<StatusCode> {
    st.device()?.call(|c| c.heatmap_off()).await?;
    Ok(StatusCode::NO_CONTENT)
}

async fn heatmap_latest(State(st): State<Arc<AppState>>) -> ApiResult<Json<HeatmapEvent>> {
    st.streams
        .latest_heatmap
        .lock()
        .expect("heatmap lock")
        .clone()
        .map(Json)
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "not_found", "no heatmap frame received yet"))
}

async fn heatmap_events(State(st): State<Arc<AppState>>) -> impl IntoResponse {
    sse(st.streams.heatmaps.subscribe(), "heatmap")
}

async fn device_events(State(st): State<Arc<AppState>>) -> impl IntoResponse {
    sse(st.streams.log.subscribe(), "log")
}

#[derive(Deserialize)]
struct MenuQuery {
    key: char,
}

async fn menu_key(State(st): State<Arc<AppState>>, Query(q): Query<MenuQuery>) -> ApiResult<StatusCode> {
    st.device()?.call(move |c| c.menu_key(q.key)).await?;
    Ok(StatusCode::NO_CONTENT)
}
