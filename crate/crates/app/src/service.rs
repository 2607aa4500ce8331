//! HTTP service: visual search, classification and catalog lookups.
//!
//! All request handlers read from an immutable [`Snapshot`]; the admin
//! reload endpoint builds a fresh one from the configured files and swaps it
//! in atomically, so in-flight requests finish against the old state.

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::{Arc, RwLock};
use std::time::Instant;

use anyhow::Context;
use axum::body::Body;
use axum::extract::multipart::{Field, MultipartError};
use axum::extract::{DefaultBodyLimit, Multipart, Path, Query, Request, State};
use axum::http::{header, HeaderValue, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use fsearch_core::autoencoder::{self, INPUT_SHAPE};
use fsearch_core::classifier::{self, ClassifierMode};
use fsearch_core::dataset::{
    decode_image_bytes, image_path, DatasetManifest, LabelScheme, ProductRecord,
};
use fsearch_core::search::{load_store, EmbeddingStore};
use fsearch_core::tensor::load_weights;
use fsearch_core::{Error as CoreError, ImageTensor, Network32, Tensor};
use serde::{Deserialize, Serialize};
use serde_json::json;
use tower_http::cors::{AllowOrigin, CorsLayer};

use crate::config::ServiceConfig;

/// Multipart framing allowance on top of the configured image size.
const MULTIPART_OVERHEAD: usize = 64 * 1024;

/// A classifier together with the vocabulary its outputs index.
pub struct LoadedClassifier {
    pub network: Network32,
    pub vocabulary: Vec<String>,
}

/// Everything a request needs, loaded once and never mutated.
pub struct Snapshot {
    pub store: EmbeddingStore,
    pub autoencoder: Network32,
    pub catalog: HashMap<u64, ProductRecord>,
    pub image_dir: PathBuf,
    pub classifiers: HashMap<LabelScheme, LoadedClassifier>,
}

impl Snapshot {
    /// Loads and cross-checks every file the config references.
    pub fn load(config: &ServiceConfig) -> anyhow::Result<Self> {
        let autoencoder: Network32 = load_weights(&config.autoencoder_weights)
            .with_context(|| format!("loading {}", config.autoencoder_weights.display()))?;
        let embedding_dim = autoencoder::encode(&autoencoder, &Tensor::zeros(INPUT_SHAPE))
            .context("autoencoder weights do not accept 64x64x3 images")?
            .len();
        let store = load_store(&config.store)
            .with_context(|| format!("loading {}", config.store.display()))?;
        if let Some(d) = store.dimension() {
            anyhow::ensure!(
                d == embedding_dim,
                "store holds {d}-dimensional vectors but the encoder produces {embedding_dim}"
            );
        }
        let manifest = DatasetManifest::load(&config.catalog_manifest)
            .with_context(|| format!("loading {}", config.catalog_manifest.display()))?;
        let image_dir = manifest.image_dir.clone();
        let catalog = manifest.records.into_iter().map(|r| (r.id, r)).collect();

        let mut classifiers = HashMap::new();
        for entry in &config.classifiers {
            let network: Network32 = load_weights(&entry.weights)
                .with_context(|| format!("loading {}", entry.weights.display()))?;
            let manifest = DatasetManifest::load(&entry.manifest)
                .with_context(|| format!("loading {}", entry.manifest.display()))?;
            let n_classes = classifier::n_classes_of(&network);
            anyhow::ensure!(
                n_classes == Some(manifest.n_classes()),
                "{} predicts {n_classes:?} classes but its manifest has {}",
                entry.weights.display(),
                manifest.n_classes()
            );
            match classifier::mode_of(&network) {
                Some(ClassifierMode::ScratchCnn) => {}
                Some(ClassifierMode::EmbeddingHead { input_dim }) => anyhow::ensure!(
                    input_dim == embedding_dim,
                    "{} expects {input_dim}-dimensional embeddings; only the service encoder's {embedding_dim} can be served",
                    entry.weights.display()
                ),
                None => anyhow::bail!("{} is not a classifier", entry.weights.display()),
            }
            let previous = classifiers.insert(
                manifest.scheme,
                LoadedClassifier {
                    network,
                    vocabulary: manifest.vocabulary,
                },
            );
            anyhow::ensure!(
                previous.is_none(),
                "two classifiers configured for scheme {}",
                manifest.scheme
            );
        }

        Ok(Self {
            store,
            autoencoder,
            catalog,
            image_dir,
            classifiers,
        })
    }

    /// Top-k hits for a decoded 64×64 query, joined with catalog metadata
    /// in index order.
    pub fn search(&self, query: &ImageTensor, k: usize) -> Result<SearchResponse, ApiError> {
        let embedding =
            autoencoder::encode(&self.autoencoder, query).map_err(ApiError::internal)?;
        let hits = self
            .store
            .top_k(&embedding, k)
            .map_err(ApiError::internal)?;
        let hits = hits
            .into_iter()
            .map(|hit| {
                let record = self.catalog.get(&hit.id);
                let field =
                    |f: fn(&ProductRecord) -> &String| record.map(f).cloned().unwrap_or_default();
                SearchHit {
                    id: hit.id,
                    score: hit.score,
                    gender: field(|r| &r.gender),
                    master_category: field(|r| &r.master_category),
                    sub_category: field(|r| &r.sub_category),
                    article_type: field(|r| &r.article_type),
                    display_name: field(|r| &r.display_name),
                    image_url: image_url(hit.id),
                }
            })
            .collect();
        Ok(SearchResponse { k, hits })
    }

    pub fn classify(
        &self,
        scheme: LabelScheme,
        query: &ImageTensor,
    ) -> Result<ClassifyResponse, ApiError> {
        let model = self.classifiers.get(&scheme).ok_or_else(|| {
            ApiError::new(
                StatusCode::CONFLICT,
                "no_model_for_scheme",
                format!("no classifier is loaded for scheme {scheme}"),
            )
        })?;
        let input = match classifier::mode_of(&model.network) {
            Some(ClassifierMode::EmbeddingHead { .. }) => Tensor::vector(
                autoencoder::encode(&self.autoencoder, query).map_err(ApiError::internal)?,
            ),
            _ => query.clone(),
        };
        let probabilities =
            classifier::predict(&model.network, &input).map_err(ApiError::internal)?;
        let best = probabilities.argmax();
        Ok(ClassifyResponse {
            scheme,
            label: model.vocabulary[best].clone(),
            probabilities: model
                .vocabulary
                .iter()
                .zip(probabilities.as_slice())
                .map(|(label, &probability)| LabelProbability {
                    label: label.clone(),
                    probability,
                })
                .collect(),
        })
    }
}

fn image_url(id: u64) -> String {
    format!("/api/products/{id}/image")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchHit {
    pub id: u64,
    pub score: f64,
    pub gender: String,
    pub master_category: String,
    pub sub_category: String,
    pub article_type: String,
    pub display_name: String,
    pub image_url: String,
}

/// Hits in descending score order, at most `k` of them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResponse {
    pub k: usize,
    pub hits: Vec<SearchHit>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelProbability {
    pub label: String,
    pub probability: f64,
}

/// Top label plus the full distribution in vocabulary order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifyResponse {
    pub scheme: LabelScheme,
    pub label: String,
    pub probabilities: Vec<LabelProbability>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProductView {
    #[serde(flatten)]
    pub record: ProductRecord,
    pub image_url: String,
}

/// JSON error body: `{"error": "<machine-readable code>", "message": "..."}`.
#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: &'static str,
    pub message: String,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self {
            status,
            code,
            message: message.into(),
        }
    }

    fn internal(err: impl std::fmt::Display) -> Self {
        Self::new(
            StatusCode::INTERNAL_SERVER_ERROR,
            "internal",
            err.to_string(),
        )
    }

    fn bad_request(code: &'static str, message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, code, message)
    }

    fn too_large(limit: usize) -> Self {
        Self::new(
            StatusCode::PAYLOAD_TOO_LARGE,
            "upload_too_large",
            format!("image exceeds the {limit}-byte upload limit"),
        )
    }

    fn not_loaded() -> Self {
        Self::new(
            StatusCode::SERVICE_UNAVAILABLE,
            "store_not_loaded",
            "the embedding store and models are not loaded",
        )
    }

    fn unknown_product(id: u64) -> Self {
        Self::new(
            StatusCode::NOT_FOUND,
            "unknown_product",
            format!("no product with id {id}"),
        )
    }
}

impl From<MultipartError> for ApiError {
    fn from(err: MultipartError) -> Self {
        let status = err.status();
        if status == StatusCode::PAYLOAD_TOO_LARGE {
            Self::new(status, "upload_too_large", err.body_text())
        } else {
            Self::new(status, "bad_multipart", err.body_text())
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (
            self.status,
            Json(json!({ "error": self.code, "message": self.message })),
        )
            .into_response()
    }
}

/// Shared service state: the config plus the current snapshot, if any.
pub struct AppState {
    config: ServiceConfig,
    snapshot: RwLock<Option<Arc<Snapshot>>>,
    log_requests: bool,
}

impl AppState {
    /// Loads the snapshot eagerly; fails if any referenced file is bad.
    pub fn load(config: ServiceConfig) -> anyhow::Result<Self> {
        let snapshot = Snapshot::load(&config)?;
        Ok(Self::with_snapshot(config, Some(snapshot)))
    }

    pub fn with_snapshot(config: ServiceConfig, snapshot: Option<Snapshot>) -> Self {
        Self {
            config,
            snapshot: RwLock::new(snapshot.map(Arc::new)),
            log_requests: true,
        }
    }

    /// Turns the per-request log lines on stderr on or off (on by default).
    pub fn with_request_log(mut self, enabled: bool) -> Self {
        self.log_requests = enabled;
        self
    }

    pub fn config(&self) -> &ServiceConfig {
        &self.config
    }

    pub fn snapshot(&self) -> Option<Arc<Snapshot>> {
        self.snapshot
            .read()
            .unwrap_or_else(|e| e.into_inner())
            .clone()
    }

    fn require_snapshot(&self) -> Result<Arc<Snapshot>, ApiError> {
        self.snapshot().ok_or_else(ApiError::not_loaded)
    }

    fn swap(&self, snapshot: Snapshot) {
        *self.snapshot.write().unwrap_or_else(|e| e.into_inner()) = Some(Arc::new(snapshot));
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    let body_limit = state.config.max_upload_bytes + MULTIPART_OVERHEAD;
    let cors = match state.config.cors_origin.as_deref() {
        None | Some("*") => CorsLayer::permissive(),
        Some(origin) => CorsLayer::new()
            .allow_origin(AllowOrigin::exact(
                HeaderValue::from_str(origin).unwrap_or(HeaderValue::from_static("null")),
            ))
            .allow_methods(tower_http::cors::Any)
            .allow_headers(tower_http::cors::Any),
    };
    Router::new()
        .route("/api/health", get(health))
        .route("/api/search", post(search))
        .route("/api/classify", post(classify))
        .route("/api/products/:id", get(product))
        .route("/api/products/:id/image", get(product_image))
        .route("/api/admin/reload", post(reload))
        .layer(DefaultBodyLimit::max(body_limit))
        .layer(cors)
        .layer(middleware::from_fn_with_state(state.clone(), log_request))
        .with_state(state)
}

/// Emits one JSON object per request on stderr.
async fn log_request(State(state): State<Arc<AppState>>, request: Request, next: Next) -> Response {
    if !state.log_requests {
        return next.run(request).await;
    }
    let started = Instant::now();
    let method = request.method().to_string();
    let path = request.uri().path().to_owned();
    let response = next.run(request).await;
    let line = json!({
        "method": method,
        "path": path,
        "status": response.status().as_u16(),
        "latency_ms": started.elapsed().as_secs_f64() * 1e3,
    });
    eprintln!("{line}");
    response
}

async fn health(State(state): State<Arc<AppState>>) -> Response {
    match state.snapshot() {
        Some(_) => Json(json!({ "status": "ok" })).into_response(),
        None => (
            StatusCode::SERVICE_UNAVAILABLE,
            Json(json!({ "status": "loading" })),
        )
            .into_response(),
    }
}

#[derive(Debug, Default, Deserialize)]
struct SearchParams {
    k: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
struct ClassifyParams {
    scheme: Option<String>,
}

/// The parts of an upload form the handlers care about.
#[derive(Default)]
struct Upload {
    image: Option<Vec<u8>>,
    k: Option<String>,
    scheme: Option<String>,
}

async fn read_limited(mut field: Field<'_>, limit: usize) -> Result<Vec<u8>, ApiError> {
    let mut bytes = Vec::new();
    while let Some(chunk) = field.chunk().await? {
        if bytes.len() + chunk.len() > limit {
            return Err(ApiError::too_large(limit));
        }
        bytes.extend_from_slice(&chunk);
    }
    Ok(bytes)
}

async fn read_upload(mut multipart: Multipart, limit: usize) -> Result<Upload, ApiError> {
    let mut upload = Upload::default();
    while let Some(field) = multipart.next_field().await? {
        match field.name() {
            Some("image") => upload.image = Some(read_limited(field, limit).await?),
            Some("k") => upload.k = Some(field.text().await?),
            Some("scheme") => upload.scheme = Some(field.text().await?),
            _ => {}
        }
    }
    Ok(upload)
}

/// Decodes and resizes the uploaded image off the async runtime, then runs `job`.
async fn with_query<R, F>(
    snapshot: Arc<Snapshot>,
    bytes: Option<Vec<u8>>,
    job: F,
) -> Result<R, ApiError>
where
    R: Send + 'static,
    F: FnOnce(&Snapshot, &ImageTensor) -> Result<R, ApiError> + Send + 'static,
{
    let bytes = bytes.ok_or_else(|| {
        ApiError::bad_request("missing_image", "multipart field \"image\" is required")
    })?;
    tokio::task::spawn_blocking(move || {
        let query = decode_image_bytes::<f32>(&bytes, (INPUT_SHAPE.height, INPUT_SHAPE.width))
            .map_err(|e| {
                let message = match e {
                    CoreError::Decode { message, .. } => message,
                    other => other.to_string(),
                };
                ApiError::new(
                    StatusCode::UNPROCESSABLE_ENTITY,
                    "undecodable_image",
                    message,
                )
            })?;
        job(&snapshot, &query)
    })
    .await
    .map_err(ApiError::internal)?
}

async fn search(
    State(state): State<Arc<AppState>>,
    Query(params): Query<SearchParams>,
    multipart: Multipart,
) -> Result<Json<SearchResponse>, ApiError> {
    let snapshot = state.require_snapshot()?;
    let upload = read_upload(multipart, state.config.max_upload_bytes).await?;
    let k = match (params.k, upload.k.as_deref()) {
        (Some(k), _) => k,
        (None, Some(text)) => text.trim().parse().map_err(|_| {
            ApiError::bad_request(
                "invalid_k",
                format!("k must be a positive integer, got {text:?}"),
            )
        })?,
        (None, None) => state.config.default_k,
    };
    if k == 0 {
        return Err(ApiError::bad_request("invalid_k", "k must be at least 1"));
    }
    with_query(snapshot, upload.image, move |s, q| s.search(q, k))
        .await
        .map(Json)
}

async fn classify(
    State(state): State<Arc<AppState>>,
    Query(params): Query<ClassifyParams>,
    multipart: Multipart,
) -> Result<Json<ClassifyResponse>, ApiError> {
    let snapshot = state.require_snapshot()?;
    let upload = read_upload(multipart, state.config.max_upload_bytes).await?;
    let scheme = params
        .scheme
        .or(upload.scheme)
        .ok_or_else(|| ApiError::bad_request("missing_scheme", "a label scheme is required"))?;
    let scheme: LabelScheme = scheme
        .parse()
        .map_err(|e: CoreError| ApiError::bad_request("unknown_scheme", e.to_string()))?;
    with_query(snapshot, upload.image, move |s, q| s.classify(scheme, q))
        .await
        .map(Json)
}

async fn product(
    State(state): State<Arc<AppState>>,
    Path(id): Path<u64>,
) -> Result<Json<ProductView>, ApiError> {
    let snapshot = state.require_snapshot()?;
    let record = snapshot
        .catalog
        .get(&id)
        .ok_or_else(|| ApiError::unknown_product(id))?;
    Ok(Json(ProductView {
        record: record.clone(),
        image_url: image_url(id),
    }))
}

async fn product_image(
    State(state): State<Arc<AppState>>,
    Path(id): Path<u64>,
) -> Result<Response, ApiError> {
    let snapshot = state.require_snapshot()?;
    if !snapshot.catalog.contains_key(&id) {
        return Err(ApiError::unknown_product(id));
    }
    let path = image_path(&snapshot.image_dir, id);
    let bytes = tokio::fs::read(&path).await.map_err(|_| {
        ApiError::new(
            StatusCode::NOT_FOUND,
            "image_missing",
            format!("no image file for product {id}"),
        )
    })?;
    Ok((
        [(header::CONTENT_TYPE, content_type(&bytes))],
        Body::from(bytes),
    )
        .into_response())
}

/// Catalog files are `.jpg`, but sniff the bytes so a mislabeled PNG is
/// still served with the right type.
fn content_type(bytes: &[u8]) -> &'static str {
    if bytes.starts_with(b"\x89PNG\r\n\x1a\n") {
        "image/png"
    } else {
        "image/jpeg"
    }
}

async fn reload(State(state): State<Arc<AppState>>) -> Result<Json<serde_json::Value>, ApiError> {
    let config = state.config.clone();
    let snapshot = tokio::task::spawn_blocking(move || Snapshot::load(&config))
        .await
        .map_err(ApiError::internal)?
        .map_err(|e| {
            ApiError::new(
                StatusCode::INTERNAL_SERVER_ERROR,
                "reload_failed",
                format!("{e:#}"),
            )
        })?;
    let products = snapshot.store.len();
    state.swap(snapshot);
    Ok(Json(
        json!({ "status": "reloaded", "embeddings": products }),
    ))
}

/// Binds `0.0.0.0:port` and serves until Ctrl-C.
pub async fn serve(state: Arc<AppState>) -> anyhow::Result<()> {
    let port = state.config.port;
    let listener = tokio::net::TcpListener::bind(("0.0.0.0", port))
        .await
        .with_context(|| format!("binding port {port}"))?;
    eprintln!("{}", json!({ "event": "listening", "port": port }));
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
