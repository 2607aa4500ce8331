mod common;

use std::sync::Arc;

use axum::body::Body;
use axum::http::{header, Method, Request, StatusCode};
use axum::Router;
use common::{multipart, service_files, Catalog, ServiceFiles};
use fsearch::config::{ClassifierConfig, ServiceConfig};
use fsearch::service::{router, AppState, ClassifyResponse, SearchResponse};
use http_body_util::BodyExt;
use serde_json::Value;
use tower::ServiceExt;

struct Fixture {
    _dir: tempfile::TempDir,
    catalog: Catalog,
    files: ServiceFiles,
    config: ServiceConfig,
}

fn fixture() -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let catalog = Catalog::create(dir.path());
    let files = service_files(&catalog);
    let config = ServiceConfig {
        port: 0,
        store: files.store.clone(),
        autoencoder_weights: files.autoencoder.clone(),
        catalog_manifest: files.manifest.clone(),
        classifiers: vec![ClassifierConfig {
            weights: files.scratch_classifier.clone(),
            manifest: files.manifest.clone(),
        }],
        default_k: 5,
        max_upload_bytes: 64 * 1024,
        cors_origin: None,
    };
    Fixture {
        _dir: dir,
        catalog,
        files,
        config,
    }
}

fn app(config: &ServiceConfig) -> Router {
    router(Arc::new(
        AppState::load(config.clone())
            .unwrap()
            .with_request_log(false),
    ))
}

async fn send(app: &Router, request: Request<Body>) -> (StatusCode, Vec<u8>, Option<String>) {
    let response = app.clone().oneshot(request).await.unwrap();
    let status = response.status();
    let content_type = response
        .headers()
        .get(header::CONTENT_TYPE)
        .map(|v| v.to_str().unwrap().to_owned());
    let body = response
        .into_body()
        .collect()
        .await
        .unwrap()
        .to_bytes()
        .to_vec();
    (status, body, content_type)
}

fn upload(uri: &str, fields: &[(&str, &[u8])]) -> Request<Body> {
    let (content_type, body) = multipart(fields);
    Request::builder()
        .method(Method::POST)
        .uri(uri)
        .header(header::CONTENT_TYPE, content_type)
        .body(Body::from(body))
        .unwrap()
}

fn get(uri: &str) -> Request<Body> {
    Request::get(uri).body(Body::empty()).unwrap()
}

fn image_bytes(f: &Fixture, id: u64) -> Vec<u8> {
    std::fs::read(f.catalog.images.join(format!("{id}.jpg"))).unwrap()
}

fn error_code(body: &[u8]) -> String {
    let v: Value = serde_json::from_slice(body).unwrap();
    v["error"].as_str().unwrap().to_owned()
}

#[tokio::test]
async fn health_reports_ok_once_loaded() {
    let f = fixture();
    let (status, body, _) = send(&app(&f.config), get("/api/health")).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(
        serde_json::from_slice::<Value>(&body).unwrap(),
        serde_json::json!({"status": "ok"})
    );
}

#[tokio::test]
async fn self_retrieval_default_k_and_determinism() {
    let f = fixture();
    let app = app(&f.config);
    let id = f.catalog.ids[3];
    let bytes = image_bytes(&f, id);
    let (status, first, _) = send(&app, upload("/api/search", &[("image", &bytes)])).await;
    assert_eq!(status, StatusCode::OK);
    let response: SearchResponse = serde_json::from_slice(&first).unwrap();
    assert_eq!(response.hits.len(), 5);
    assert_eq!(response.hits[0].id, id);
    assert!(response.hits[0].score >= 0.999);
    assert!(response.hits.windows(2).all(|w| w[0].score >= w[1].score));
    assert_eq!(response.hits[0].article_type, "Shirts");
    assert_eq!(
        response.hits[0].image_url,
        format!("/api/products/{id}/image")
    );

    let (_, second, _) = send(&app, upload("/api/search", &[("image", &bytes)])).await;
    assert_eq!(first, second);
}

#[tokio::test]
async fn hit_order_matches_index_order() {
    let f = fixture();
    let snapshot = fsearch::service::Snapshot::load(&f.config).unwrap();
    let bytes = image_bytes(&f, f.catalog.ids[10]);
    let query = fsearch_core::dataset::decode_image_bytes::<f32>(&bytes, (64, 64)).unwrap();
    let embedding = fsearch_core::autoencoder::encode(&snapshot.autoencoder, &query).unwrap();
    let direct: Vec<u64> = snapshot
        .store
        .top_k(&embedding, 7)
        .unwrap()
        .iter()
        .map(|h| h.id)
        .collect();
    let (_, body, _) = send(
        &app(&f.config),
        upload("/api/search?k=7", &[("image", &bytes)]),
    )
    .await;
    let served: SearchResponse = serde_json::from_slice(&body).unwrap();
    assert_eq!(served.hits.iter().map(|h| h.id).collect::<Vec<_>>(), direct);
}

#[tokio::test]
async fn k_from_query_or_form() {
    let f = fixture();
    let app = app(&f.config);
    let bytes = image_bytes(&f, f.catalog.ids[0]);
    let (_, body, _) = send(&app, upload("/api/search?k=3", &[("image", &bytes)])).await;
    assert_eq!(
        serde_json::from_slice::<SearchResponse>(&body)
            .unwrap()
            .hits
            .len(),
        3
    );
    let (_, body, _) = send(
        &app,
        upload("/api/search", &[("image", &bytes), ("k", b"2")]),
    )
    .await;
    assert_eq!(
        serde_json::from_slice::<SearchResponse>(&body)
            .unwrap()
            .hits
            .len(),
        2
    );
    let (_, body, _) = send(&app, upload("/api/search?k=1000", &[("image", &bytes)])).await;
    assert_eq!(
        serde_json::from_slice::<SearchResponse>(&body)
            .unwrap()
            .hits
            .len(),
        24
    );
    let (status, body, _) = send(&app, upload("/api/search?k=0", &[("image", &bytes)])).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(error_code(&body), "invalid_k");
}

#[tokio::test]
async fn external_image_of_any_size_returns_finite_scores() {
    let f = fixture();
    let mut png = Vec::new();
    image::RgbImage::from_fn(300, 123, |x, y| {
        image::Rgb([(x % 256) as u8, (y * 2 % 256) as u8, 90])
    })
    .write_to(&mut std::io::Cursor::new(&mut png), image::ImageFormat::Png)
    .unwrap();
    let (status, body, _) = send(&app(&f.config), upload("/api/search", &[("image", &png)])).await;
    assert_eq!(status, StatusCode::OK);
    let response: SearchResponse = serde_json::from_slice(&body).unwrap();
    assert_eq!(response.hits.len(), 5);
    assert!(response
        .hits
        .iter()
        .all(|h| h.score.is_finite() && f.catalog.ids.contains(&h.id)));
}

#[tokio::test]
async fn upload_errors() {
    let f = fixture();
    let app = app(&f.config);
    let (status, body, _) = send(
        &app,
        upload("/api/search", &[("image", b"definitely not an image")]),
    )
    .await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(error_code(&body), "undecodable_image");

    let big = vec![0u8; f.config.max_upload_bytes + 1];
    let (status, body, _) = send(&app, upload("/api/search", &[("image", &big)])).await;
    assert_eq!(status, StatusCode::PAYLOAD_TOO_LARGE);
    assert_eq!(error_code(&body), "upload_too_large");

    let huge = vec![0u8; f.config.max_upload_bytes * 4];
    let (status, _, _) = send(&app, upload("/api/search", &[("image", &huge)])).await;
    assert_eq!(status, StatusCode::PAYLOAD_TOO_LARGE);

    let (status, body, _) = send(&app, upload("/api/search", &[("k", b"3")])).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(error_code(&body), "missing_image");
}

#[tokio::test]
async fn unloaded_state_is_unavailable() {
    let f = fixture();
    let app = router(Arc::new(
        AppState::with_snapshot(f.config.clone(), None).with_request_log(false),
    ));
    let (status, _, _) = send(&app, get("/api/health")).await;
    assert_eq!(status, StatusCode::SERVICE_UNAVAILABLE);
    let bytes = image_bytes(&f, f.catalog.ids[0]);
    let (status, body, _) = send(&app, upload("/api/search", &[("image", &bytes)])).await;
    assert_eq!(status, StatusCode::SERVICE_UNAVAILABLE);
    assert_eq!(error_code(&body), "store_not_loaded");

    let (status, _, _) = send(
        &app,
        Request::post("/api/admin/reload")
            .body(Body::empty())
            .unwrap(),
    )
    .await;
    assert_eq!(status, StatusCode::OK);
    let (status, _, _) = send(&app, get("/api/health")).await;
    assert_eq!(status, StatusCode::OK);
}

#[tokio::test]
async fn reload_failure_keeps_serving_old_snapshot() {
    let f = fixture();
    let state = Arc::new(
        AppState::load(f.config.clone())
            .unwrap()
            .with_request_log(false),
    );
    let app = router(state.clone());
    std::fs::write(&f.files.store, b"FEMB garbage").unwrap();
    let (status, body, _) = send(
        &app,
        Request::post("/api/admin/reload")
            .body(Body::empty())
            .unwrap(),
    )
    .await;
    assert_eq!(status, StatusCode::INTERNAL_SERVER_ERROR);
    assert_eq!(error_code(&body), "reload_failed");
    assert_eq!(state.snapshot().unwrap().store.len(), 24);
}

#[tokio::test]
async fn classify_returns_vocabulary_distribution() {
    let f = fixture();
    let app = app(&f.config);
    let bytes = image_bytes(&f, f.catalog.ids[9]);
    let (status, first, _) = send(
        &app,
        upload("/api/classify?scheme=article-type", &[("image", &bytes)]),
    )
    .await;
    assert_eq!(status, StatusCode::OK);
    let response: ClassifyResponse = serde_json::from_slice(&first).unwrap();
    let labels: Vec<&str> = response
        .probabilities
        .iter()
        .map(|p| p.label.as_str())
        .collect();
    assert_eq!(labels, ["Shirts", "Shoes", "Watches"]);
    assert!(labels.contains(&response.label.as_str()));
    let total: f64 = response.probabilities.iter().map(|p| p.probability).sum();
    assert!((total - 1.0).abs() <= 1e-6);
    let (_, second, _) = send(
        &app,
        upload("/api/classify?scheme=article-type", &[("image", &bytes)]),
    )
    .await;
    assert_eq!(first, second);

    let (status, body, _) = send(
        &app,
        upload(
            "/api/classify",
            &[("scheme", b"sub-category"), ("image", &bytes)],
        ),
    )
    .await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(error_code(&body), "no_model_for_scheme");
    let (status, body, _) = send(
        &app,
        upload("/api/classify?scheme=colour", &[("image", &bytes)]),
    )
    .await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(error_code(&body), "unknown_scheme");
}

#[tokio::test]
async fn embedding_head_classifier_uses_the_service_encoder() {
    let mut f = fixture();
    f.config.classifiers[0].weights = f.files.head_classifier.clone();
    let bytes = image_bytes(&f, f.catalog.ids[1]);
    let (status, body, _) = send(
        &app(&f.config),
        upload("/api/classify?scheme=article-type", &[("image", &bytes)]),
    )
    .await;
    assert_eq!(status, StatusCode::OK);
    let response: ClassifyResponse = serde_json::from_slice(&body).unwrap();
    assert_eq!(response.probabilities.len(), 3);
}

#[tokio::test]
async fn products_and_images() {
    let f = fixture();
    let app = app(&f.config);
    let id = f.catalog.ids[8];
    let (status, body, _) = send(&app, get(&format!("/api/products/{id}"))).await;
    assert_eq!(status, StatusCode::OK);
    let v: Value = serde_json::from_slice(&body).unwrap();
    assert_eq!(v["id"], id);
    for key in [
        "gender",
        "master_category",
        "sub_category",
        "article_type",
        "display_name",
    ] {
        assert!(v[key].is_string(), "{key} missing");
    }
    assert_eq!(v["article_type"], "Shoes");

    let (status, body, content_type) = send(&app, get(&format!("/api/products/{id}/image"))).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(content_type.as_deref(), Some("image/jpeg"));
    assert_eq!(body, image_bytes(&f, id));

    for uri in ["/api/products/999999", "/api/products/999999/image"] {
        let (status, body, _) = send(&app, get(uri)).await;
        assert_eq!(status, StatusCode::NOT_FOUND);
        assert_eq!(error_code(&body), "unknown_product");
    }
}

#[tokio::test]
async fn cors_headers_are_present() {
    let f = fixture();
    let request = Request::get("/api/health")
        .header(header::ORIGIN, "http://localhost:5173")
        .body(Body::empty())
        .unwrap();
    let response = app(&f.config).oneshot(request).await.unwrap();
    assert!(response
        .headers()
        .contains_key(header::ACCESS_CONTROL_ALLOW_ORIGIN));
}

#[test]
fn startup_rejects_mismatched_files() {
    let f = fixture();
    let mut config = f.config.clone();
    config.store = f.root_missing();
    assert!(AppState::load(config).is_err());

    let mut config = f.config.clone();
    config.autoencoder_weights = f.files.scratch_classifier.clone();
    assert!(AppState::load(config).is_err());
}

impl Fixture {
    fn root_missing(&self) -> std::path::PathBuf {
        self.catalog.root.join("missing.femb")
    }
}
