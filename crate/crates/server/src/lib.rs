//! Read-only HTTP/JSON service over the artifacts written by the batch
//! commands: unit rankings, per-sample reports, overlays and patch slices.

mod index;
mod routes;

use std::sync::Arc;

pub use index::{build_index, ServeConfig, ServeError, ServingIndex, UnitSort, ARTIFACTS_ENV};
pub use routes::router;

/// Serves `index` on `listener` until Ctrl-C.
pub async fn serve(index: ServingIndex, listener: tokio::net::TcpListener) -> std::io::Result<()> {
    let app = router(Arc::new(index));
    log::info!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, app)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
