//! JSON/HTTP front end of the triage engine.
//!
//! | method | path | |
//! |---|---|---|
//! | POST | `/v1/replays` | classify a submission, returns a summary |
//! | GET | `/v1/replays/{id}/classifications` | paged results, filter by `uncertain`, `class_id` |
//! | POST | `/v1/corrections` | append operator corrections to the store |
//! | POST | `/v1/retrain` | fit a new model and swap it in |
//! | GET | `/v1/model` | serving model metadata |
//! | GET | `/v1/projection` | 2D overview of the training rows |
//!
//! Errors are `{"error": {"code", "message", "field"?}}` with status 400
//! (bad input, `field` is a JSON path), 404, 409 (retrain running), 422,
//! 503 (no model yet) or 500.

pub mod api;
pub mod error;
pub mod settings;
pub mod state;

use std::net::SocketAddr;
use std::sync::Arc;

pub use api::router;
pub use error::ApiError;
pub use settings::{Flags, Settings};
pub use state::AppState;

/// Serves until ctrl-c.
pub async fn serve(state: Arc<AppState>, listen: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(listen).await?;
    tracing::info!(addr = %listener.local_addr()?, model_version = ?state.serving().version(), "listening");
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
