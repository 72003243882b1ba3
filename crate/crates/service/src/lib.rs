//! HTTP service over the speaker-naming engine.
//!
//! Stores live in memory as named sessions: many concurrent readers or one
//! writer per store, with predictions taken against the state visible when
//! the request acquired the store. Long-running evaluations snapshot the
//! store so enrollment is not blocked behind them.
//!
//! Besides the session endpoints there are stateless document operations
//! (`/v1/eval`, `/v1/enroll`, `/v1/bench`, `/v1/synth`) that carry
//! knowledge and manifest files in the request body; these back the CLI.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, RwLock};

use axum::extract::{DefaultBodyLimit, Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};

use attnamer_client::types::*;
use attnamer_engine::attention::predict_window_scaled;
use attnamer_engine::baselines::TrainConfig;
use attnamer_engine::bench::{run_grid, BenchRow, GridSpec};
use attnamer_engine::error::EngineError;
use attnamer_engine::metrics::{evaluate, Accounting, EvalOptions, Method};
use attnamer_engine::pipeline::{load_manifest_str, WindowQuery};
use attnamer_engine::store::{
    Identity, KnowledgeStore, ModalEmbedding, Modality, ShotRecord, StoreConfig,
};
use attnamer_engine::synth::{generate_population, PopulationSpec};

type SharedStore = Arc<RwLock<KnowledgeStore>>;

#[derive(Clone, Default)]
pub struct AppState {
    stores: Arc<RwLock<HashMap<String, SharedStore>>>,
    next_id: Arc<AtomicU64>,
}

/// Service error: an engine error plus HTTP-layer conditions.
#[derive(Debug)]
pub enum ApiError {
    Engine(EngineError),
    StoreNotFound(String),
}

impl From<EngineError> for ApiError {
    fn from(e: EngineError) -> Self {
        ApiError::Engine(e)
    }
}

impl ApiError {
    fn status(&self) -> StatusCode {
        match self {
            ApiError::StoreNotFound(_) => StatusCode::NOT_FOUND,
            ApiError::Engine(e) => match e.kind() {
                "empty_store" | "overlapping_ids" => StatusCode::CONFLICT,
                "invalid_spec" | "unknown_identity" | "empty_class" => {
                    StatusCode::UNPROCESSABLE_ENTITY
                }
                "io" => StatusCode::INTERNAL_SERVER_ERROR,
                _ => StatusCode::BAD_REQUEST,
            },
        }
    }

    fn body(&self) -> ApiErrorBody {
        match self {
            ApiError::StoreNotFound(id) => ApiErrorBody {
                kind: "store_not_found".into(),
                message: format!("no store named '{id}'"),
                line: None,
            },
            ApiError::Engine(e) => ApiErrorBody {
                kind: e.kind().into(),
                message: e.to_string(),
                line: e.line(),
            },
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status(), Json(ErrorResponse { error: self.body() })).into_response()
    }
}

pub fn router() -> Router {
    Router::new()
        .route("/healthz", get(health))
        .route("/v1/stores", post(create_store).get(list_stores))
        .route(
            "/v1/stores/{id}",
            get(store_detail).delete(delete_store),
        )
        .route("/v1/stores/{id}/identities", post(register_identity))
        .route("/v1/stores/{id}/shots", post(enroll_shots))
        .route("/v1/stores/{id}/knowledge", get(export_knowledge))
        .route("/v1/stores/{id}/predict", post(predict))
        .route("/v1/stores/{id}/eval", post(eval_store))
        .route("/v1/eval", post(eval_documents))
        .route("/v1/enroll", post(enroll_documents))
        .route("/v1/bench", post(bench))
        .route("/v1/synth", post(synth))
        .layer(DefaultBodyLimit::max(256 * 1024 * 1024))
        .with_state(AppState::default())
}

/// Serve until the listener is closed.
pub async fn serve(listener: tokio::net::TcpListener) -> std::io::Result<()> {
    axum::serve(listener, router()).await
}

/// Run the service on the current thread, blocking forever.
pub fn serve_blocking(addr: SocketAddr) -> std::io::Result<()> {
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(async {
        let listener = tokio::net::TcpListener::bind(addr).await?;
        eprintln!("listening on http://{}", listener.local_addr()?);
        serve(listener).await
    })
}

/// Handle to a background service; dropping it shuts the service down.
pub struct ServerHandle {
    addr: SocketAddr,
    shutdown: Option<tokio::sync::oneshot::Sender<()>>,
    thread: Option<std::thread::JoinHandle<()>>,
}

impl ServerHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn base_url(&self) -> String {
        format!("http://{}", self.addr)
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(thread) = self.thread.take() {
            let _ = thread.join();
        }
    }
}

/// Start the service on an ephemeral loopback port in a background thread.
/// Used by the CLI when no external server is configured, and by tests.
pub fn spawn_ephemeral() -> std::io::Result<ServerHandle> {
    let (addr_tx, addr_rx) = std::sync::mpsc::channel();
    let (shutdown_tx, shutdown_rx) = tokio::sync::oneshot::channel::<()>();
    let thread = std::thread::spawn(move || {
        let runtime = match tokio::runtime::Runtime::new() {
            Ok(rt) => rt,
            Err(e) => {
                let _ = addr_tx.send(Err(e));
                return;
            }
        };
        runtime.block_on(async {
            let listener = match tokio::net::TcpListener::bind(("127.0.0.1", 0)).await {
                Ok(l) => l,
                Err(e) => {
                    let _ = addr_tx.send(Err(e));
                    return;
                }
            };
            let addr = listener.local_addr().expect("listener has an address");
            let _ = addr_tx.send(Ok(addr));
            let server = axum::serve(listener, router()).with_graceful_shutdown(async {
                let _ = shutdown_rx.await;
            });
            let _ = server.await;
        });
    });
    let addr = addr_rx
        .recv()
        .map_err(|_| std::io::Error::other("service thread exited before binding"))??;
    Ok(ServerHandle {
        addr,
        shutdown: Some(shutdown_tx),
        thread: Some(thread),
    })
}

async fn health() -> Json<serde_json::Value> {
    Json(serde_json::json!({"status": "ok"}))
}

fn summarize(store_id: &str, store: &KnowledgeStore) -> StoreSummary {
    StoreSummary {
        store_id: store_id.to_string(),
        d_face: store.config().d_face,
        d_voice: store.config().d_voice,
        n_identities: store.num_identities(),
        n_shots: store.num_shots(),
        params_bytes: store.parameter_count_bytes(),
        params_kb: store.parameter_count_kb(),
    }
}

fn shot_counts(store: &KnowledgeStore) -> Vec<IdentityShots> {
    store
        .shot_counts()
        .into_iter()
        .enumerate()
        .map(|(index, (label, shots))| IdentityShots {
            label,
            index,
            shots,
        })
        .collect()
}

impl AppState {
    fn store(&self, id: &str) -> Result<SharedStore, ApiError> {
        self.stores
            .read()
            .expect("store registry lock")
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::StoreNotFound(id.to_string()))
    }
}

async fn create_store(
    State(state): State<AppState>,
    Json(req): Json<CreateStoreRequest>,
) -> Result<Json<StoreSummary>, ApiError> {
    let mut config = StoreConfig::default();
    if let Some(d) = req.d_face {
        config.d_face = d;
    }
    if let Some(d) = req.d_voice {
        config.d_voice = d;
    }
    if let Some(auto) = req.auto_register {
        config.auto_register = auto;
    }
    if config.d_face == 0 || config.d_voice == 0 {
        return Err(EngineError::InvalidSpec {
            message: "embedding dimensions must be positive".into(),
        }
        .into());
    }
    let id = format!("s{}", state.next_id.fetch_add(1, Ordering::Relaxed) + 1);
    let store = KnowledgeStore::new(config);
    let summary = summarize(&id, &store);
    state
        .stores
        .write()
        .expect("store registry lock")
        .insert(id, Arc::new(RwLock::new(store)));
    Ok(Json(summary))
}

async fn list_stores(State(state): State<AppState>) -> Json<Vec<StoreSummary>> {
    let stores = state.stores.read().expect("store registry lock");
    let mut out: Vec<StoreSummary> = stores
        .iter()
        .map(|(id, s)| summarize(id, &s.read().expect("store lock")))
        .collect();
    out.sort_by(|a, b| a.store_id.cmp(&b.store_id));
    Json(out)
}

async fn store_detail(
    State(state): State<AppState>,
    Path(id): Path<String>,
) -> Result<Json<StoreDetail>, ApiError> {
    let store = state.store(&id)?;
    let store = store.read().expect("store lock");
    Ok(Json(StoreDetail {
        summary: summarize(&id, &store),
        identities: shot_counts(&store),
    }))
}

async fn delete_store(
    State(state): State<AppState>,
    Path(id): Path<String>,
) -> Result<Json<serde_json::Value>, ApiError> {
    state
        .stores
        .write()
        .expect("store registry lock")
        .remove(&id)
        .ok_or(ApiError::StoreNotFound(id))?;
    Ok(Json(serde_json::json!({"deleted": true})))
}

async fn register_identity(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Json(req): Json<RegisterIdentityRequest>,
) -> Result<Json<Identity>, ApiError> {
    let store = state.store(&id)?;
    let mut store = store.write().expect("store lock");
    Ok(Json(store.register_identity(&req.label)?))
}

async fn enroll_shots(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Json(shots): Json<Vec<ShotRecord>>,
) -> Result<Json<EnrollShotsResponse>, ApiError> {
    let store = state.store(&id)?;
    let mut store = store.write().expect("store lock");
    for shot in &shots {
        store.enroll_record(shot)?;
    }
    Ok(Json(EnrollShotsResponse {
        enrolled: shots.len(),
        n_identities: store.num_identities(),
        n_shots: store.num_shots(),
        params_bytes: store.parameter_count_bytes(),
        params_kb: store.parameter_count_kb(),
        shot_counts: shot_counts(&store),
    }))
}

async fn export_knowledge(
    State(state): State<AppState>,
    Path(id): Path<String>,
) -> Result<Response, ApiError> {
    let store = state.store(&id)?;
    let text = store.read().expect("store lock").to_jsonl();
    Ok((
        StatusCode::OK,
        [("content-type", "application/jsonl; charset=utf-8")],
        text,
    )
        .into_response())
}

async fn predict(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Json(req): Json<PredictRequest>,
) -> Result<Json<attnamer_engine::attention::PredictionRecord>, ApiError> {
    let store = state.store(&id)?;
    let store = store.read().expect("store lock");
    let faces = req
        .faces
        .iter()
        .map(|f| ModalEmbedding::new(f.clone(), Modality::Face))
        .collect::<Result<Vec<_>, _>>()?;
    let voice = ModalEmbedding::new(req.voice.clone(), Modality::Voice)?;
    let window = WindowQuery {
        index: 0,
        t_start: 0.0,
        t_end: 0.5,
        faces,
        voice,
        ground_truth: None,
    };
    let tau = req.tau.unwrap_or(0.25);
    let sf = req.scale_factor.unwrap_or_else(|| store.scale_factor());
    Ok(Json(predict_window_scaled(&store, &window, tau, sf)?))
}

fn parse_method(name: Option<&str>) -> Result<Method, ApiError> {
    match name {
        None => Ok(Method::Att),
        Some(s) => Method::parse(s).ok_or_else(|| {
            ApiError::Engine(EngineError::InvalidSpec {
                message: format!("unknown method '{s}' (expected att, tfs or lwf)"),
            })
        }),
    }
}

fn parse_accounting(name: Option<&str>) -> Result<Accounting, ApiError> {
    match name {
        None | Some("inclusive") => Ok(Accounting::Inclusive),
        Some("exclusive") => Ok(Accounting::Exclusive),
        Some(s) => Err(ApiError::Engine(EngineError::InvalidSpec {
            message: format!("unknown accounting '{s}' (expected inclusive or exclusive)"),
        })),
    }
}

fn eval_options(
    method: Option<&str>,
    tau: Option<f32>,
    factor: Option<usize>,
    seed: Option<u64>,
    accounting: Option<&str>,
) -> Result<EvalOptions, ApiError> {
    Ok(EvalOptions {
        method: parse_method(method)?,
        tau: tau.unwrap_or(0.25),
        window_factor: factor.unwrap_or(1).max(1),
        train: TrainConfig {
            seed: seed.unwrap_or(0),
            ..TrainConfig::default()
        },
        repetitions: 3,
        accounting: parse_accounting(accounting)?,
        scale_factor: None,
    })
}

async fn eval_store(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Json(req): Json<StoreEvalRequest>,
) -> Result<Json<attnamer_engine::metrics::EvalReport>, ApiError> {
    let shared = state.store(&id)?;
    // snapshot so enrollment is not blocked behind a training run
    let store = shared.read().expect("store lock").clone();
    let opts = eval_options(
        req.method.as_deref(),
        req.tau,
        req.factor,
        req.seed,
        req.accounting.as_deref(),
    )?;
    let report = tokio::task::spawn_blocking(move || {
        let stream = load_manifest_str(&req.manifest)?;
        evaluate(&store, &stream, &opts)
    })
    .await
    .map_err(|e| EngineError::InvalidSpec {
        message: format!("evaluation task failed: {e}"),
    })??;
    Ok(Json(report))
}

async fn eval_documents(
    Json(req): Json<EvalDocRequest>,
) -> Result<Json<attnamer_engine::metrics::EvalReport>, ApiError> {
    let opts = eval_options(
        req.method.as_deref(),
        req.tau,
        req.factor,
        req.seed,
        req.accounting.as_deref(),
    )?;
    let report = tokio::task::spawn_blocking(move || {
        let store = KnowledgeStore::from_jsonl_str(&req.knowledge, None)?;
        let stream = load_manifest_str(&req.manifest)?;
        evaluate(&store, &stream, &opts)
    })
    .await
    .map_err(|e| EngineError::InvalidSpec {
        message: format!("evaluation task failed: {e}"),
    })??;
    Ok(Json(report))
}

async fn enroll_documents(
    Json(req): Json<EnrollDocRequest>,
) -> Result<Json<EnrollDocResponse>, ApiError> {
    let mut store = KnowledgeStore::from_jsonl_str(&req.knowledge, None)?;
    // additions are parsed record by record so a bad line is reported with
    // its own line number and nothing is committed
    let additions_config = (!store.is_empty()).then(|| store.config().clone());
    let additions = KnowledgeStore::from_jsonl_str(&req.additions, additions_config)?;
    if store.is_empty() {
        // a fresh store takes its dimensions from the additions
        store = KnowledgeStore::new(additions.config().clone());
    }
    for m in 0..additions.num_shots() {
        store.enroll_record(&additions.shot_record(m))?;
    }
    Ok(Json(EnrollDocResponse {
        knowledge: store.to_jsonl(),
        n_identities: store.num_identities(),
        n_shots: store.num_shots(),
        params_bytes: store.parameter_count_bytes(),
        params_kb: store.parameter_count_kb(),
        shot_counts: shot_counts(&store),
    }))
}

async fn bench(Json(req): Json<BenchRequest>) -> Result<Json<BenchResponse>, ApiError> {
    let mut spec = GridSpec::default();
    if let Some(ids) = req.grid_ids {
        spec.ids = ids;
    }
    if let Some(shots) = req.grid_shots {
        spec.shots = shots;
    }
    if let Some(methods) = req.methods {
        let mut parsed = Vec::with_capacity(methods.len());
        for m in &methods {
            parsed.push(parse_method(Some(m))?);
        }
        spec.methods = parsed;
    }
    if let Some(seed) = req.seed {
        spec.seed = seed;
    }
    if let Some(d) = req.d_face {
        spec.d_face = d;
    }
    if let Some(d) = req.d_voice {
        spec.d_voice = d;
    }
    if let Some(noise) = req.noise {
        spec.noise = noise;
    }
    if let Some(q) = req.queries_per_id {
        spec.queries_per_id = q;
    }
    if let Some(tau) = req.tau {
        spec.tau = tau;
    }
    if let Some(reps) = req.repetitions {
        spec.repetitions = reps;
    }
    // jobs is accepted for interface stability; every cell reports setup
    // time, so cells always run one at a time

    let (rows, error) = tokio::task::spawn_blocking(move || {
        let mut rows: Vec<BenchRow> = Vec::new();
        let result = run_grid(&spec, |row| rows.push(row.clone()));
        let error = result.err().map(|e| ApiErrorBody {
            kind: e.kind().into(),
            message: e.to_string(),
            line: e.line(),
        });
        (rows, error)
    })
    .await
    .map_err(|e| EngineError::InvalidSpec {
        message: format!("bench task failed: {e}"),
    })?;

    let mut csv = String::from(BenchRow::CSV_HEADER);
    csv.push('\n');
    for row in &rows {
        csv.push_str(&row.to_csv_row());
        csv.push('\n');
    }
    Ok(Json(BenchResponse { csv, rows, error }))
}

async fn synth(Json(req): Json<SynthRequest>) -> Result<Json<SynthResponse>, ApiError> {
    let defaults = PopulationSpec::default();
    let spec = PopulationSpec {
        n_ids: req.n_ids,
        shots_per_id: req.shots_per_id,
        d_face: req.d_face.unwrap_or(defaults.d_face),
        d_voice: req.d_voice.unwrap_or(defaults.d_voice),
        face_noise: req.face_noise.unwrap_or(defaults.face_noise),
        voice_noise: req.voice_noise.unwrap_or(defaults.voice_noise),
        distractor_ratio: req.distractor_ratio.unwrap_or(defaults.distractor_ratio),
        queries_per_id: req.queries_per_id.unwrap_or(defaults.queries_per_id),
        max_centroid_cos: req.max_centroid_cos.unwrap_or(defaults.max_centroid_cos),
        seed: req.seed.unwrap_or(defaults.seed),
    };
    let population = tokio::task::spawn_blocking(move || generate_population(&spec))
        .await
        .map_err(|e| EngineError::InvalidSpec {
            message: format!("generation task failed: {e}"),
        })??;
    Ok(Json(SynthResponse {
        knowledge: population.store.to_jsonl(),
        manifest: population.stream.to_jsonl(),
        n_identities: population.store.num_identities(),
        n_shots: population.store.num_shots(),
        n_windows: population.stream.len(),
    }))
}
