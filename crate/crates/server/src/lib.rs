//! Network service for the meeting feedback mediator: REST and WebSocket
//! routes, configuration, and the process entry points used by the
//! `mediator` binary.

pub mod app;
pub mod config;

use std::net::SocketAddr;
use std::sync::{Arc, RwLock};

use mediator_core::llm::{ChatProvider, Gateway, MockScript, OpenAiCompatible, OpenAiConfig, ScriptedMock};
use mediator_core::{Clock, Mediator, MediatorConfig};
use tokio::net::TcpListener;
use tokio::sync::oneshot;
use tokio::task::JoinHandle;

pub use app::{router, AppState};
pub use config::{ConfigError, LogFormat, ProviderConfig, ServiceConfig};

#[derive(Debug, thiserror::Error)]
pub enum ServeError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("cannot bind {addr}: {source}")]
    Bind { addr: String, source: std::io::Error },
    #[error("cannot start: {0}")]
    Core(#[from] mediator_core::Error),
}

pub fn build_gateway(config: &ServiceConfig) -> Result<Gateway, ServeError> {
    let provider: Arc<dyn ChatProvider> = match &config.provider {
        ProviderConfig::Mock { script } => Arc::new(ScriptedMock::new(MockScript::load(script)?)),
        ProviderConfig::OpenAi {
            base_url,
            api_key,
            model,
            timeout_ms,
        } => {
            let p = OpenAiCompatible::new(OpenAiConfig {
                base_url: base_url.clone(),
                api_key: api_key.clone(),
                model: model.clone(),
                request_timeout_ms: *timeout_ms,
            })
            .map_err(|e| mediator_core::Error::GatewayUnavailable(e.to_string()))?;
            Arc::new(p)
        }
    };
    Ok(Gateway::new(provider, config.gateway.clone()))
}

/// Opens the event log (replaying it) with the configured provider.
pub fn open_mediator(config: &ServiceConfig) -> Result<Mediator, ServeError> {
    std::fs::create_dir_all(&config.data_dir).map_err(mediator_core::Error::from)?;
    let gateway = build_gateway(config)?;
    let mc = MediatorConfig {
        control_message: config.control_message.clone(),
        snapshot_every: config.snapshot_every,
        clock: Clock::System,
        fsync: config.fsync,
        audit_prompts: false,
    };
    Ok(Mediator::open(&config.data_dir, gateway, mc)?)
}

pub struct ServerHandle {
    pub local_addr: SocketAddr,
    pub mediator: app::Shared,
    shutdown: Option<oneshot::Sender<()>>,
    task: JoinHandle<std::io::Result<()>>,
}

impl ServerHandle {
    /// Stops accepting connections and waits for in-flight requests.
    pub async fn shutdown(mut self) -> std::io::Result<()> {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        self.task.await.map_err(std::io::Error::other)?
    }

    /// Serves until ctrl-c.
    pub async fn run_until_ctrl_c(self) -> std::io::Result<()> {
        tokio::signal::ctrl_c().await?;
        tracing::info!("shutting down");
        self.shutdown().await
    }
}

/// Recovers state from the data directory, then binds and starts serving.
/// Recovery finishes before the listener accepts anything.
pub async fn serve(config: ServiceConfig) -> Result<ServerHandle, ServeError> {
    let cfg = config.clone();
    let mediator = tokio::task::spawn_blocking(move || open_mediator(&cfg))
        .await
        .map_err(|e| mediator_core::Error::Storage(e.to_string()))??;
    if let Some(r) = mediator.recovery() {
        if r.truncated_tail {
            tracing::warn!("discarded a torn final line in the event log");
        }
    }
    let listener = TcpListener::bind(&config.bind).await.map_err(|source| ServeError::Bind {
        addr: config.bind.clone(),
        source,
    })?;
    let local_addr = listener.local_addr().map_err(|source| ServeError::Bind {
        addr: config.bind.clone(),
        source,
    })?;
    let shared = Arc::new(RwLock::new(mediator));
    let state = AppState {
        mediator: shared.clone(),
        auth_token: config.auth_token.as_str().into(),
    };
    let (tx, rx) = oneshot::channel::<()>();
    let app = router(state);
    let task = tokio::spawn(async move {
        axum::serve(listener, app)
            .with_graceful_shutdown(async {
                let _ = rx.await;
            })
            .await
    });
    tracing::info!(%local_addr, "listening");
    Ok(ServerHandle {
        local_addr,
        mediator: shared,
        shutdown: Some(tx),
        task,
    })
}

/// Installs the global tracing subscriber. Safe to call more than once.
pub fn init_logging(level: &str, format: LogFormat) {
    use tracing_subscriber::EnvFilter;
    let filter = EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new(level));
    let builder = tracing_subscriber::fmt().with_env_filter(filter).with_writer(std::io::stderr);
    let _ = match format {
        LogFormat::Json => builder.json().try_init(),
        LogFormat::Text => builder.try_init(),
    };
}
