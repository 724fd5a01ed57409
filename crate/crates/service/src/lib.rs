//! HTTP JSON service over the redress engine, with snapshot persistence and
//! TOML configuration.

pub mod api;
pub mod config;
pub mod storage;

use std::net::SocketAddr;
use std::sync::Arc;

use redress_core::{fixtures, Engine, EngineState};
use thiserror::Error;
use tokio::net::TcpListener;
use tokio::sync::oneshot;
use tokio::task::JoinHandle;

pub use api::{router, AppState, CLOCK_HEADER};
pub use config::{ConfigError, ServiceConfig};
pub use storage::{FileSnapshotStore, MemoryStore, Storage, StorageError};

#[derive(Debug, Error)]
pub enum StartError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Storage(#[from] StorageError),
    #[error("cannot bind {addr}: {source}")]
    Bind {
        addr: SocketAddr,
        #[source]
        source: std::io::Error,
    },
}

/// Builds service state from configuration. A saved snapshot wins over
/// fixture seeding.
pub fn build_state(config: &ServiceConfig, seed_fixtures: bool) -> Result<AppState, StartError> {
    let store: Box<dyn Storage> = match &config.persistence_path {
        Some(p) => Box::new(FileSnapshotStore::new(p)),
        None => Box::new(MemoryStore::default()),
    };
    build_state_with(config, seed_fixtures, store)
}

pub fn build_state_with(config: &ServiceConfig, seed_fixtures: bool, store: Box<dyn Storage>) -> Result<AppState, StartError> {
    let keys = config.key_ring(seed_fixtures)?;
    let minimizer = config.minimizer();
    let settings = config.settings();
    let engine = match store.load()? {
        Some(state) => Engine::new(state, keys, minimizer, settings),
        None if seed_fixtures => Engine::with_fixtures(keys, minimizer, settings),
        None => Engine::new(EngineState::default(), keys, minimizer, settings),
    };
    let mut sessions: Vec<_> = if seed_fixtures { fixtures::sessions() } else { Vec::new() };
    sessions.extend(config.sessions.iter().map(|s| (s.token.clone(), s.account.clone())));
    Ok(AppState::new(engine, store, sessions, config.harness_mode)?)
}

/// A service bound to a socket and running on the current runtime.
pub struct RunningService {
    pub addr: SocketAddr,
    pub state: Arc<AppState>,
    shutdown: Option<oneshot::Sender<()>>,
    task: JoinHandle<()>,
}

impl RunningService {
    pub fn base_url(&self) -> String {
        format!("http://{}/api/v1", self.addr)
    }

    /// Graceful stop: in-flight requests finish first.
    pub async fn stop(mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        let _ = (&mut self.task).await;
    }

    /// Abrupt stop, as if the process died.
    pub async fn kill(self) {
        self.task.abort();
        let _ = self.task.await;
    }
}

pub async fn start(state: AppState, addr: SocketAddr) -> Result<RunningService, StartError> {
    let listener = TcpListener::bind(addr)
        .await
        .map_err(|source| StartError::Bind { addr, source })?;
    let addr = listener.local_addr().map_err(|source| StartError::Bind { addr, source })?;
    let state = Arc::new(state);
    let app = router(state.clone());
    let (tx, rx) = oneshot::channel::<()>();
    let task = tokio::spawn(async move {
        let serve = axum::serve(listener, app).with_graceful_shutdown(async {
            let _ = rx.await;
        });
        if let Err(e) = serve.await {
            tracing::error!(error = %e, "server stopped");
        }
    });
    tracing::info!(%addr, "listening");
    Ok(RunningService {
        addr,
        state,
        shutdown: Some(tx),
        task,
    })
}
