//! HTTP/JSON API over live relevance-feedback search sessions.
//!
//! Each session lives behind its own lock, so requests to one session are
//! serialized while different sessions refit in parallel on the blocking
//! pool. Every mutation is appended to the session's operation log (see
//! [`store`]) before it becomes visible.

pub mod app;
pub mod config;
pub mod error;
pub mod store;
pub mod views;

pub use app::{router, AppState, ArchiveResponse, Health, SharedState};
pub use config::{Preset, ServiceConfig};
pub use error::ApiError;
pub use store::{LogRecord, Op, Store};

/// Serves until ctrl-c, evicting idle sessions in the background.
pub async fn serve(app: SharedState) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(&app.config.addr).await?;
    tracing::info!(addr = %listener.local_addr()?, "listening");
    let evictor = app.spawn_evictor();
    let result = axum::serve(listener, router(app))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await;
    evictor.abort();
    result
}
