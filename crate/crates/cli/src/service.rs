//! HTTP verifier service.
//!
//! Devices upload scan batches, provers submit claims and receive
//! certificates. Writes go through a single write lock on the store; claim
//! verification holds read locks on the store and fingerprint for its whole
//! duration, so each certificate is computed against one consistent snapshot.

use std::path::PathBuf;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use serde_json::json;
use tokio::sync::RwLock;
use wifiproof_core::netsets::{compute_stable_intersection, compute_stable_top_fraction, IntersectionConfig};
use wifiproof_core::verifier::{claim_admissible, issue_certificate, period_containing};
use wifiproof_core::{
    LocationClaim, ObservationStore, RawObservation, StableMap, StableStrategy, TimeWindow, VerifierConfig,
    VerifyError,
};

pub type Clock = Arc<dyn Fn() -> DateTime<Utc> + Send + Sync>;

pub fn system_clock() -> Clock {
    Arc::new(Utc::now)
}

pub struct AppState {
    pub store: RwLock<ObservationStore>,
    pub stable: RwLock<Option<StableMap>>,
    pub fingerprint_path: Option<PathBuf>,
    pub config: VerifierConfig,
    pub clock: Clock,
}

impl AppState {
    pub fn new(store: ObservationStore, stable: Option<StableMap>, config: VerifierConfig) -> Self {
        Self {
            store: RwLock::new(store),
            stable: RwLock::new(stable),
            fingerprint_path: None,
            config,
            clock: system_clock(),
        }
    }

    pub fn with_clock(mut self, clock: Clock) -> Self {
        self.clock = clock;
        self
    }

    pub fn with_fingerprint_path(mut self, path: PathBuf) -> Self {
        self.fingerprint_path = Some(path);
        self
    }
}

/// Error body: `{"error": "<Kind>", "detail": "..."}`.
#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    body: serde_json::Value,
}

impl ApiError {
    fn new(status: StatusCode, kind: &str, detail: impl std::fmt::Display) -> Self {
        Self {
            status,
            body: json!({ "error": kind, "detail": detail.to_string() }),
        }
    }

    fn malformed(detail: impl std::fmt::Display) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "MalformedPayload", detail)
    }

    fn internal(detail: impl std::fmt::Display) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "Internal", detail)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

fn parse<T: for<'de> Deserialize<'de>>(body: &Bytes) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(ApiError::malformed)
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/observations", post(post_observations))
        .route("/claims", post(post_claim))
        .route("/fingerprint", get(get_fingerprint).put(put_fingerprint))
        .route("/fingerprint/compute", post(compute_fingerprint))
        .with_state(state)
}

async fn health(State(st): State<Arc<AppState>>) -> Json<serde_json::Value> {
    let observations = st.store.read().await.len();
    let locations = st.stable.read().await.as_ref().map_or(0, StableMap::len);
    Json(json!({
        "status": "ok",
        "observations": observations,
        "fingerprint_locations": locations,
        "config_digest": st.config.digest(),
    }))
}

async fn post_observations(
    State(st): State<Arc<AppState>>,
    body: Bytes,
) -> ApiResult<wifiproof_core::IngestReport> {
    let batch: Vec<RawObservation> = parse(&body)?;
    let report = st.store.write().await.append_batch(batch).map_err(ApiError::internal)?;
    Ok(Json(report))
}

async fn post_claim(
    State(st): State<Arc<AppState>>,
    body: Bytes,
) -> ApiResult<wifiproof_core::LocationCertificate> {
    let claim: LocationClaim = parse(&body)?;
    let now = (st.clock)();
    if !claim_admissible(claim.time, now, st.config.period) {
        let period = period_containing(claim.time, st.config.period);
        return Err(ApiError {
            status: StatusCode::CONFLICT,
            body: json!({
                "error": "PeriodOpen",
                "detail": "claims are verified once the period containing claim.time has closed",
                "period_end": period.end(),
            }),
        });
    }
    let store = st.store.read().await;
    let stable = st.stable.read().await;
    let Some(stable) = stable.as_ref() else {
        return Err(ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "NoFingerprint", "no fingerprint installed"));
    };
    match issue_certificate(&store, &claim, &st.config, stable, now) {
        Ok(cert) => Ok(Json(cert)),
        Err(VerifyError::UnknownLocation(loc)) => Err(ApiError::new(
            StatusCode::NOT_FOUND,
            "UnknownLocation",
            format!("no fingerprint for location `{loc}`"),
        )),
        Err(e) => Err(ApiError::internal(e)),
    }
}

async fn get_fingerprint(State(st): State<Arc<AppState>>) -> Result<Response, ApiError> {
    match st.stable.read().await.as_ref() {
        Some(map) => Ok(Json(map).into_response()),
        None => Err(ApiError::new(StatusCode::NOT_FOUND, "NoFingerprint", "no fingerprint installed")),
    }
}

async fn install(st: &AppState, map: StableMap) -> Result<Json<StableMap>, ApiError> {
    if let Some(path) = &st.fingerprint_path {
        std::fs::write(path, map.to_json()).map_err(ApiError::internal)?;
    }
    *st.stable.write().await = Some(map.clone());
    Ok(Json(map))
}

async fn put_fingerprint(State(st): State<Arc<AppState>>, body: Bytes) -> ApiResult<StableMap> {
    let map: StableMap = parse(&body)?;
    map.check_invariants()
        .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "InvalidFingerprint", e))?;
    install(&st, map).await
}

#[derive(Debug, Deserialize, Serialize)]
pub struct ComputeRequest {
    pub strategy: StableStrategy,
    /// Defaults to the full time range of the store.
    #[serde(default)]
    pub epoch: Option<TimeWindow>,
}

async fn compute_fingerprint(State(st): State<Arc<AppState>>, body: Bytes) -> ApiResult<StableMap> {
    let req: ComputeRequest = parse(&body)?;
    let map = {
        let store = st.store.read().await;
        let epoch = match req.epoch {
            Some(e) => e,
            None => {
                let (a, b) = store.time_range().ok_or_else(|| {
                    ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "NoObservations", "store is empty")
                })?;
                TimeWindow::epoch(a, b).expect("ordered")
            }
        };
        let result = match req.strategy {
            StableStrategy::DeviceIntersection => {
                compute_stable_intersection(&store, &epoch, IntersectionConfig::default())
            }
            StableStrategy::TopFraction { fraction } => compute_stable_top_fraction(&store, &epoch, fraction),
        };
        result.map_err(|e| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "StableSetError", e))?
    };
    install(&st, map).await
}

/// Serves until `shutdown` resolves.
pub async fn serve(
    listener: tokio::net::TcpListener,
    state: Arc<AppState>,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, router(state)).with_graceful_shutdown(shutdown).await
}
