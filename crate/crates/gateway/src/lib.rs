//! HTTP gateway over a shared [`Engine`]: registrar, resolver, event,
//! trace and cost endpoints with bearer-token accounts.
//!
//! Every error body is `{"error_code": .., "message": ..}` with the status
//! given by [`status_for`].

mod api;
pub mod config;

use std::collections::BTreeMap;
use std::future::Future;
use std::sync::Arc;

use chrono::Duration;
use didchain_core::clock::{system_clock, SharedClock, SteppingClock};
use didchain_core::error::{Classify, ErrorCode};
use didchain_core::events::{Engine, EngineError};
use didchain_core::ledger::AccountId;
use thiserror::Error;
use tokio::net::TcpListener;
use tokio::sync::RwLock;

pub use api::{router, status_for, ApiError};
pub use config::GatewayConfig;

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("cannot bind {addr}: {source}")]
    BindFailure { addr: String, source: std::io::Error },
    #[error("invalid configuration: {0}")]
    ConfigInvalid(String),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error("server error: {0}")]
    Serve(std::io::Error),
}

impl Classify for GatewayError {
    fn code(&self) -> ErrorCode {
        match self {
            GatewayError::BindFailure { .. } | GatewayError::Serve(_) => ErrorCode::Internal,
            GatewayError::ConfigInvalid(_) => ErrorCode::ConfigInvalid,
            GatewayError::Engine(e) => e.code(),
        }
    }
}

/// Shared handler state. Cloning is cheap.
#[derive(Clone)]
pub struct AppState {
    engine: Arc<RwLock<Engine>>,
    tokens: Arc<BTreeMap<String, AccountId>>,
}

impl AppState {
    pub fn new(engine: Engine, tokens: &BTreeMap<String, String>) -> Self {
        Self {
            engine: Arc::new(RwLock::new(engine)),
            tokens: Arc::new(tokens.iter().map(|(t, a)| (t.clone(), AccountId::new(a.clone()))).collect()),
        }
    }

    pub fn engine(&self) -> &Arc<RwLock<Engine>> {
        &self.engine
    }
}

/// The clock `config` asks for. A deterministic clock on a persisted engine
/// resumes one step after its last recorded timestamp.
pub fn clock_for(config: &GatewayConfig, resume_after: Option<chrono::DateTime<chrono::Utc>>) -> SharedClock {
    match config.clock_start {
        Some(start) => {
            let start = resume_after.map_or(start, |t| start.max(t + Duration::seconds(1)));
            Arc::new(SteppingClock::starting_at(start))
        }
        None => system_clock(),
    }
}

/// Opens or creates the engine and registers any configured actors that
/// are not present yet.
pub fn build_engine(config: &GatewayConfig) -> Result<Engine, GatewayError> {
    config.validate()?;
    let mut engine = match &config.data_dir {
        Some(dir) => {
            let mut engine = Engine::open(dir, config.engine.clone(), clock_for(config, None))?;
            engine.set_clock(clock_for(config, engine.last_timestamp()));
            engine
        }
        None => Engine::new(config.engine.clone(), clock_for(config, None))?,
    };
    for spec in &config.actors {
        if engine.actor(&spec.alias).is_err() {
            engine.register_actor(spec.clone())?;
        }
    }
    engine.save()?;
    Ok(engine)
}

/// Serves on an already bound listener until `shutdown` resolves.
pub async fn serve_with_shutdown(
    listener: TcpListener,
    state: AppState,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> Result<(), GatewayError> {
    axum::serve(listener, router(state))
        .with_graceful_shutdown(shutdown)
        .await
        .map_err(GatewayError::Serve)
}

/// Binds `config.bind` and serves until Ctrl-C or SIGTERM.
pub async fn serve(config: GatewayConfig) -> Result<(), GatewayError> {
    let engine = build_engine(&config)?;
    let listener = TcpListener::bind(config.bind).await.map_err(|source| GatewayError::BindFailure {
        addr: config.bind.to_string(),
        source,
    })?;
    tracing::info!(addr = %config.bind, "gateway listening");
    serve_with_shutdown(listener, AppState::new(engine, &config.tokens), shutdown_signal()).await
}

async fn shutdown_signal() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    let term = async {
        match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            Ok(mut s) => {
                s.recv().await;
            }
            Err(_) => std::future::pending::<()>().await,
        }
    };
    #[cfg(not(unix))]
    let term = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {},
        _ = term => {},
    }
    tracing::info!("shutting down");
}
