//! HTTP service for reviewing and annotating ECG recordings.
//!
//! The store is flattened and masked once into an immutable [`Snapshot`];
//! handlers read it through an `Arc` and never see raw subject or resource
//! ids. Annotations go to an append-only [`AnnotationLog`] beside the store.
//!
//! | Method | Path | Body |
//! |---|---|---|
//! | GET | `/api/health` | status and counts |
//! | GET | `/api/recordings` | paged [`routes::RecordingList`] |
//! | GET | `/api/recordings/{id}` | summary, waveform, annotations |
//! | POST | `/api/recordings/{id}/annotations` | 201 and the stored annotation |
//! | GET | `/api/stats/ecg-counts` | chart JSON |
//! | GET | `/api/stats/time-in-study` | chart JSON |
//! | GET | `/api/series/{metric}?agg&user` | chart JSON |
//! | POST | `/api/admin/reload` | rebuilds the snapshot |

pub mod annotation;
pub mod config;
pub mod routes;
pub mod snapshot;

use std::future::Future;
use std::path::PathBuf;
use std::sync::Arc;

use axum::http::{HeaderValue, Method};
use axum::routing::{get, post};
use axum::Router;
use parking_lot::RwLock;
use thiserror::Error;
use tokio::net::TcpListener;
use tower_http::cors::{AllowOrigin, Any, CorsLayer};

use fhirflow::process::{MaskKey, ProcessError};
use fhirflow::{CodeRegistry, FsStore};

pub use annotation::{
    AnnotationInput, AnnotationLog, AnnotationRecord, Diagnosis, LogError, Quality,
};
pub use config::ServiceConfig;
pub use snapshot::{AgeGroup, Recording, Snapshot};

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Store(#[from] fhirflow::store::StoreError),
    #[error(transparent)]
    Registry(#[from] fhirflow::fhir::RegistryError),
    #[error(transparent)]
    Roster(#[from] fhirflow::flatten::RosterError),
    #[error(transparent)]
    Table(#[from] fhirflow::flatten::TableError),
    #[error(transparent)]
    Process(#[from] ProcessError),
    #[error(transparent)]
    Explore(#[from] fhirflow::explore::ExploreError),
    #[error(transparent)]
    Log(#[from] LogError),
    #[error("server I/O: {0}")]
    Io(#[from] std::io::Error),
}

struct Inner {
    store_path: PathBuf,
    registry: CodeRegistry,
    key: MaskKey,
    snapshot: RwLock<Arc<Snapshot>>,
    log: AnnotationLog,
}

/// Shared handler state. Cloning is cheap.
#[derive(Clone)]
pub struct AppState(Arc<Inner>);

impl AppState {
    /// Opens the store and the annotation log and builds the first snapshot.
    pub fn open(config: &ServiceConfig) -> Result<Self, ServiceError> {
        let registry = match &config.registry_path {
            Some(p) => CodeRegistry::load(p)?,
            None => CodeRegistry::default(),
        };
        let store = FsStore::open_with_registry(&config.store_path, registry.clone())?;
        let snapshot = Snapshot::build(&store, &registry, &config.mask_key)?;
        let log = AnnotationLog::open(config.annotation_log_path())?;
        tracing::info!(
            store = %config.store_path.display(),
            recordings = snapshot.recordings.len(),
            annotations = log.len(),
            "review state loaded"
        );
        Ok(Self(Arc::new(Inner {
            store_path: config.store_path.clone(),
            registry,
            key: config.mask_key.clone(),
            snapshot: RwLock::new(Arc::new(snapshot)),
            log,
        })))
    }

    pub fn snapshot(&self) -> Arc<Snapshot> {
        self.0.snapshot.read().clone()
    }

    pub fn log(&self) -> &AnnotationLog {
        &self.0.log
    }

    /// Re-reads the store and swaps in a new snapshot. In-flight requests
    /// keep the one they started with.
    pub fn reload(&self) -> Result<(), ServiceError> {
        let store = FsStore::open_with_registry(&self.0.store_path, self.0.registry.clone())?;
        let snapshot = Snapshot::build(&store, &self.0.registry, &self.0.key)?;
        *self.0.snapshot.write() = Arc::new(snapshot);
        Ok(())
    }
}

fn cors(origins: &[String]) -> CorsLayer {
    let layer = CorsLayer::new()
        .allow_methods([Method::GET, Method::POST])
        .allow_headers([axum::http::header::CONTENT_TYPE]);
    if origins.is_empty() {
        return layer.allow_origin(Any);
    }
    let origins: Vec<HeaderValue> = origins.iter().filter_map(|o| o.parse().ok()).collect();
    layer.allow_origin(AllowOrigin::list(origins))
}

pub fn router(state: AppState, cors_origins: &[String]) -> Router {
    Router::new()
        .route("/api/health", get(routes::health))
        .route("/api/recordings", get(routes::list_recordings))
        .route("/api/recordings/{id}", get(routes::get_recording))
        .route(
            "/api/recordings/{id}/annotations",
            post(routes::post_annotation),
        )
        .route("/api/stats/ecg-counts", get(routes::ecg_counts))
        .route("/api/stats/time-in-study", get(routes::time_in_study))
        .route("/api/series/{metric}", get(routes::series))
        .route("/api/admin/reload", post(routes::reload))
        .layer(cors(cors_origins))
        .with_state(state)
}

/// Serves until `shutdown` resolves, then drains open connections.
pub async fn serve(
    listener: TcpListener,
    app: Router,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> Result<(), ServiceError> {
    axum::serve(listener, app)
        .with_graceful_shutdown(shutdown)
        .await?;
    Ok(())
}

/// Resolves on ctrl-c or SIGTERM.
pub async fn shutdown_signal() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    let term = async {
        match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            Ok(mut s) => {
                s.recv().await;
            }
            Err(_) => std::future::pending().await,
        }
    };
    #[cfg(not(unix))]
    let term = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {},
        _ = term => {},
    }
    tracing::info!("shutdown requested");
}

/// Loads state, binds `config.bind_addr` and serves until a shutdown signal.
/// `on_bound` receives the actual address, useful with port 0.
pub async fn run(
    config: ServiceConfig,
    on_bound: impl FnOnce(std::net::SocketAddr),
) -> Result<(), ServiceError> {
    let state = tokio::task::block_in_place(|| AppState::open(&config))?;
    let listener = TcpListener::bind(config.bind_addr).await?;
    on_bound(listener.local_addr()?);
    serve(
        listener,
        router(state, &config.cors_origins),
        shutdown_signal(),
    )
    .await
}
