//! HTTP service running the AEbA study: registration, image rating with
//! progress gates, one game per day, adversarial replays of other players'
//! games, leaderboards and FP/FN export.
//!
//! State is event sourced. Every mutation is appended to a log before it is
//! applied, and restarting replays the log (from the latest snapshot).

pub mod api;
pub mod clock;
pub mod config;
pub mod events;
pub mod service;
pub mod state;
pub mod store;

use std::net::SocketAddr;
use std::sync::Arc;

use tokio::net::TcpListener;
use tokio::task::JoinHandle;

pub use config::{ServiceConfig, Settings};
pub use service::{Service, ServiceError};

/// Serves `service` on `listener` until `shutdown` resolves.
pub async fn serve(
    listener: TcpListener,
    service: Arc<Service>,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, api::router(service))
        .with_graceful_shutdown(shutdown)
        .await
}

/// Binds an ephemeral local port and serves in the background.
pub async fn spawn_local(service: Arc<Service>) -> std::io::Result<(SocketAddr, JoinHandle<()>)> {
    let listener = TcpListener::bind("127.0.0.1:0").await?;
    let addr = listener.local_addr()?;
    let handle = tokio::spawn(async move {
        if let Err(e) = serve(listener, service, std::future::pending()).await {
            tracing::error!("server stopped: {e}");
        }
    });
    Ok((addr, handle))
}
