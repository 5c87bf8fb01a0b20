//! HTTP service over the rejection pipeline: create runs, query what-if
//! thresholds, page through the uncertain queue and record human verdicts.

pub mod api;
pub mod error;
pub mod model;
pub mod store;

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

pub use api::router;
pub use error::{ApiError, ErrorBody};
pub use store::Store;

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub data_dir: PathBuf,
    /// Allowed CORS origins; `"*"` allows any.
    pub cors_origins: Vec<String>,
}

/// Open the store and serve until the process is stopped.
pub async fn serve(config: ServiceConfig, addr: SocketAddr) -> std::io::Result<()> {
    let store = Arc::new(Store::open(&config.data_dir)?);
    let app = router(store, &config.cors_origins);
    let listener = tokio::net::TcpListener::bind(addr).await?;
    axum::serve(listener, app).await
}
