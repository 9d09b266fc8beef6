//! HTTP session service.
//!
//! Each session is an append-only transcript file in the data directory plus
//! lifecycle events in `sessions.jsonl`. A turn is synced to disk before its
//! reply is sent, and [`AppState::open`] recovers every committed turn after a
//! crash. Request and response bodies are described in [`api`].

pub mod api;
mod app;
mod error;
pub mod store;

use std::future::Future;

pub use app::{router, AppState, ServiceOptions};
pub use error::{ErrorBody, ServiceError};

/// Serves the API on `listener` until `shutdown` resolves.
pub async fn serve(
    listener: tokio::net::TcpListener,
    app: AppState,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, router(app))
        .with_graceful_shutdown(shutdown)
        .await
}
