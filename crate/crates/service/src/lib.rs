//! HTTP review service: serves an outlier report and records reviewer
//! verdicts so flagged identities can be examined and cleaned.
//!
//! | method | path                    | body / result                                   |
//! |--------|-------------------------|-------------------------------------------------|
//! | GET    | `/api/queue`            | flagged identities with review status           |
//! | GET    | `/api/identity/{id}`    | samples, queue, flagged pairs, image URLs       |
//! | POST   | `/api/verdict`          | `{identity_id, mislabel_type, removed_samples, reviewer}` |
//! | GET    | `/api/progress`         | `{pending, done, totals}`                       |
//! | POST   | `/api/apply`            | `{min_remaining}`, returns the census           |
//! | GET    | `/api/report/histogram` | id-score histogram table                        |
//! | GET    | `/api/report/roc`       | verification ROC table                          |
//! | GET    | `/img/{sample_id}`      | image bytes, or an SVG placeholder              |
//!
//! Errors are `{"error": "..."}` with a 4xx/5xx status.

pub mod api;
mod error;
mod session;

use std::future::Future;
use std::path::Path;
use std::sync::Arc;

use axum::routing::{get, post};
use axum::Router;
use tokio::net::TcpListener;
use tower_http::services::ServeDir;

pub use api::TOKEN_HEADER;
pub use error::ApiError;
pub use session::{OutputPaths, ReviewSession, SessionConfig, SessionError};

pub fn router(session: Arc<ReviewSession>, ui_dir: Option<&Path>) -> Router {
    let app = Router::new()
        .route("/api/queue", get(api::queue))
        .route("/api/identity/{id}", get(api::identity))
        .route("/api/verdict", post(api::verdict))
        .route("/api/progress", get(api::progress))
        .route("/api/apply", post(api::apply))
        .route("/api/report/histogram", get(api::histogram))
        .route("/api/report/roc", get(api::roc))
        .route("/img/{*sample_id}", get(api::image))
        .layer(axum::middleware::from_fn_with_state(session.clone(), api::require_token))
        .with_state(session);
    match ui_dir {
        Some(dir) => app.fallback_service(ServeDir::new(dir)),
        None => app,
    }
}

/// Serve until `shutdown` resolves, then finish in-flight requests.
pub async fn serve(
    listener: TcpListener,
    app: Router,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, app).with_graceful_shutdown(shutdown).await
}

pub async fn ctrl_c() {
    let _ = tokio::signal::ctrl_c().await;
}
