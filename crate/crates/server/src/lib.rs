//! HTTP service backing the annotation UI.
//!
//! Sessions hold one uploaded B-scan and the latest traces, region and vessel mask.
//! Requests on one session are serialised by its lock; compute runs on the blocking
//! pool. JSON bodies use the same canonical encoding as the command line, so a
//! session's trace, mask and report bytes match the files the CLI writes.

pub mod api;
pub mod error;
pub mod session;

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use axum::extract::DefaultBodyLimit;
use axum::http::{header, HeaderValue, Method, StatusCode};
use axum::routing::{get, post};
use axum::Router;
use tower_http::cors::{AllowOrigin, CorsLayer};
use tower_http::services::ServeDir;
use tower_http::timeout::TimeoutLayer;

pub use error::{ApiError, ApiResult};
pub use session::{Session, SessionStore};

pub const DEFAULT_PORT: u16 = 8787;
pub const REQUEST_TIMEOUT: Duration = Duration::from_secs(120);
const BODY_LIMIT: usize = 64 * 1024 * 1024;

#[derive(Debug, Clone, Default)]
pub struct ServerOptions {
    pub persist: Option<PathBuf>,
    pub static_dir: Option<PathBuf>,
    pub timeout: Option<Duration>,
}

#[derive(Clone)]
pub struct AppState {
    pub store: Arc<SessionStore>,
}

fn is_local_origin(origin: &HeaderValue) -> bool {
    let Ok(origin) = origin.to_str() else { return false };
    let host = origin
        .strip_prefix("http://")
        .or_else(|| origin.strip_prefix("https://"))
        .unwrap_or("");
    let host = host.rsplit_once(':').map_or(host, |(h, port)| {
        if port.chars().all(|c| c.is_ascii_digit()) {
            h
        } else {
            host
        }
    });
    matches!(host, "localhost" | "127.0.0.1" | "[::1]")
}

pub fn router(options: ServerOptions) -> Router {
    let state = AppState {
        store: Arc::new(SessionStore::new(options.persist.clone())),
    };
    let cors = CorsLayer::new()
        .allow_origin(AllowOrigin::predicate(|origin, _| is_local_origin(origin)))
        .allow_methods([Method::GET, Method::POST, Method::DELETE])
        .allow_headers([header::CONTENT_TYPE]);
    let api = Router::new()
        .route("/api/session", post(api::create_session))
        .route("/api/session/{id}", axum::routing::delete(api::delete_session))
        .route("/api/session/{id}/image", get(api::get_image))
        .route("/api/session/{id}/edgemap", get(api::get_edgemap))
        .route("/api/session/{id}/trace", post(api::trace))
        .route("/api/session/{id}/region.png", get(api::get_region))
        .route("/api/session/{id}/vessels", post(api::vessels))
        .route("/api/session/{id}/vessels.png", get(api::get_vessels))
        .route("/api/session/{id}/measure", post(api::measure))
        .route("/api/session/{id}/audit", get(api::get_audit))
        .route("/api/trace", post(api::stateless_trace))
        .route("/api/vessels", post(api::stateless_vessels))
        .with_state(state);
    let app = match &options.static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    };
    app.layer(DefaultBodyLimit::max(BODY_LIMIT))
        .layer(TimeoutLayer::with_status_code(
            StatusCode::REQUEST_TIMEOUT,
            options.timeout.unwrap_or(REQUEST_TIMEOUT),
        ))
        .layer(cors)
}

/// Binds `addr` and serves until interrupted.
pub async fn serve(addr: SocketAddr, options: ServerOptions) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!(address = %listener.local_addr()?, "listening");
    axum::serve(listener, router(options))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn local_origins_only() {
        for ok in ["http://localhost:5173", "http://127.0.0.1", "http://[::1]:8080"] {
            assert!(is_local_origin(&HeaderValue::from_static(ok)), "{ok}");
        }
        for bad in ["http://example.com", "http://localhost.evil.com", "null"] {
            assert!(!is_local_origin(&HeaderValue::from_static(bad)), "{bad}");
        }
    }
}
