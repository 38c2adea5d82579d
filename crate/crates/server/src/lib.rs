//! Mock model-serving endpoint backed by a synthetic oracle.
//!
//! `POST /model/predict` takes a multipart form with a PNG in the `image`
//! field and answers `{"status":"ok","predictions":[{"probability":s}]}`.
//! `GET /health` answers `{"status":"ok"}`. Optional latency and seeded
//! failure injection (503) exercise client timeouts and retries.

use std::future::Future;
use std::net::SocketAddr;
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use axum::extract::multipart::MultipartRejection;
use axum::extract::{Multipart, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use onepixel_core::imaging::decode_png;
use onepixel_core::oracle::{Oracle, OracleSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;
use thiserror::Error;
use tokio::sync::oneshot;

pub const PREDICT_PATH: &str = "/model/predict";
pub const HEALTH_PATH: &str = "/health";

#[derive(Debug, Error)]
pub enum ServerError {
    #[error("invalid server configuration: {0}")]
    Config(String),
    #[error("could not bind {addr}: {source}")]
    Bind {
        addr: SocketAddr,
        #[source]
        source: std::io::Error,
    },
    #[error("server I/O error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone)]
pub struct ServerConfig {
    pub bind: SocketAddr,
    pub oracle: OracleSpec,
    /// Sleep added before every prediction.
    pub latency: Duration,
    /// Probability in `[0, 1]` that a prediction request fails with 503.
    pub failure_rate: f64,
    pub failure_seed: u64,
}

impl ServerConfig {
    pub fn new(oracle: OracleSpec) -> Self {
        Self {
            bind: SocketAddr::from(([127, 0, 0, 1], 5000)),
            oracle,
            latency: Duration::ZERO,
            failure_rate: 0.0,
            failure_seed: 0,
        }
    }

    fn validate(&self) -> Result<(), ServerError> {
        if !(0.0..=1.0).contains(&self.failure_rate) {
            return Err(ServerError::Config(format!(
                "failure rate {} outside [0, 1]",
                self.failure_rate
            )));
        }
        Ok(())
    }
}

struct AppState {
    oracle: Box<dyn Oracle>,
    latency: Duration,
    failure_rate: f64,
    failures: Mutex<ChaCha8Rng>,
}

fn error_response(status: StatusCode, message: impl Into<String>) -> Response {
    (status, Json(json!({ "status": "error", "message": message.into() }))).into_response()
}

async fn health() -> Json<serde_json::Value> {
    Json(json!({ "status": "ok" }))
}

async fn predict(State(state): State<Arc<AppState>>, multipart: Result<Multipart, MultipartRejection>) -> Response {
    let mut multipart = match multipart {
        Ok(m) => m,
        Err(e) => return error_response(StatusCode::BAD_REQUEST, e.body_text()),
    };
    let mut image = None;
    loop {
        match multipart.next_field().await {
            Ok(Some(field)) if field.name() == Some("image") => match field.bytes().await {
                Ok(bytes) => image = Some(bytes),
                Err(e) => return error_response(StatusCode::BAD_REQUEST, e.body_text()),
            },
            Ok(Some(_)) => {}
            Ok(None) => break,
            Err(e) => return error_response(StatusCode::BAD_REQUEST, e.body_text()),
        }
    }
    let Some(bytes) = image else {
        return error_response(StatusCode::BAD_REQUEST, "missing multipart field `image`");
    };

    if !state.latency.is_zero() {
        tokio::time::sleep(state.latency).await;
    }
    if state.failure_rate > 0.0 {
        let draw: f64 = state.failures.lock().expect("rng lock").random();
        if draw < state.failure_rate {
            return error_response(StatusCode::SERVICE_UNAVAILABLE, "injected failure");
        }
    }

    let image = match decode_png(&bytes) {
        Ok(img) => img,
        Err(e) => return error_response(StatusCode::BAD_REQUEST, e.to_string()),
    };
    match state.oracle.score(&image) {
        Ok(score) => Json(json!({
            "status": "ok",
            "predictions": [{ "probability": score.get() }],
        }))
        .into_response(),
        Err(e) => error_response(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
    }
}

pub fn router(config: &ServerConfig) -> Result<Router, ServerError> {
    config.validate()?;
    let oracle = config.oracle.build().map_err(|e| ServerError::Config(e.to_string()))?;
    let state = Arc::new(AppState {
        oracle,
        latency: config.latency,
        failure_rate: config.failure_rate,
        failures: Mutex::new(ChaCha8Rng::seed_from_u64(config.failure_seed)),
    });
    Ok(Router::new()
        .route(PREDICT_PATH, post(predict))
        .route(HEALTH_PATH, get(health))
        .with_state(state))
}

/// Serves until `shutdown` resolves.
pub async fn serve(
    config: ServerConfig,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> Result<(), ServerError> {
    let app = router(&config)?;
    let listener = tokio::net::TcpListener::bind(config.bind)
        .await
        .map_err(|source| ServerError::Bind {
            addr: config.bind,
            source,
        })?;
    tracing::info!(addr = %listener.local_addr()?, oracle = %config.oracle, "model server listening");
    axum::serve(listener, app).with_graceful_shutdown(shutdown).await?;
    Ok(())
}

/// A server running on a background thread. Dropping the handle shuts it down.
pub struct ServerHandle {
    addr: SocketAddr,
    shutdown: Option<oneshot::Sender<()>>,
    thread: Option<thread::JoinHandle<Result<(), ServerError>>>,
}

impl ServerHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    /// Full URL of the prediction endpoint.
    pub fn endpoint(&self) -> String {
        format!("http://{}{}", self.addr, PREDICT_PATH)
    }

    pub fn shutdown(mut self) -> Result<(), ServerError> {
        self.stop()
    }

    fn stop(&mut self) -> Result<(), ServerError> {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        match self.thread.take() {
            Some(t) => t
                .join()
                .map_err(|_| ServerError::Config("server thread panicked".into()))?,
            None => Ok(()),
        }
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        let _ = self.stop();
    }
}

/// Binds synchronously (port 0 picks a free port) and serves on a
/// dedicated runtime thread.
pub fn spawn(config: ServerConfig) -> Result<ServerHandle, ServerError> {
    let app = router(&config)?;
    let std_listener = std::net::TcpListener::bind(config.bind).map_err(|source| ServerError::Bind {
        addr: config.bind,
        source,
    })?;
    std_listener.set_nonblocking(true)?;
    let addr = std_listener.local_addr()?;
    let (tx, rx) = oneshot::channel::<()>();

    let thread =
        thread::Builder::new()
            .name(format!("model-server-{addr}"))
            .spawn(move || -> Result<(), ServerError> {
                let runtime = tokio::runtime::Builder::new_multi_thread()
                    .worker_threads(2)
                    .enable_all()
                    .build()?;
                runtime.block_on(async move {
                    let listener = tokio::net::TcpListener::from_std(std_listener)?;
                    axum::serve(listener, app)
                        .with_graceful_shutdown(async {
                            let _ = rx.await;
                        })
                        .await?;
                    Ok(())
                })
            })?;
    Ok(ServerHandle {
        addr,
        shutdown: Some(tx),
        thread: Some(thread),
    })
}
