//! The networked agent.
//!
//! Performers talk OSC over UDP or length-prefixed JSON over TCP (and the
//! same JSON over a WebSocket at `/bridge`). All session state lives in one
//! actor task: transports decode and enqueue, the actor applies messages in
//! arrival order and runs the once-per-second tick, logging every inbound
//! message and tick before anything is sent back.

// `!(x > 0.0)` is used on purpose throughout: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod actor;
pub mod http;
mod transport;

use std::io;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::atomic::AtomicU64;
use std::sync::{Arc, RwLock};
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use ensemble_core::api::SessionStatus;
use ensemble_core::forest::ForestModel;
use ensemble_core::session::{Counters, Session, SessionConfig};
use ensemble_core::session_log::{LogHeader, LogWriter};
use thiserror::Error;
use tokio::net::{TcpListener, UdpSocket};
use tokio::sync::{mpsc, watch};
use tokio::task::JoinHandle;
use tracing::info;

pub use actor::StatusBoard;

pub const DEFAULT_OSC_PORT: u16 = 9000;
pub const DEFAULT_BRIDGE_PORT: u16 = 9001;
pub const DEFAULT_HTTP_PORT: u16 = 9080;

/// Environment variable that sets the session-log directory.
pub const LOG_DIR_ENV: &str = "MT_LOG_DIR";

#[derive(Debug, Error)]
pub enum ServerError {
    #[error("port unavailable: cannot bind {addr}: {source}")]
    PortUnavailable { addr: SocketAddr, source: io::Error },
    #[error("cannot open session log in {dir}: {source}")]
    Log { dir: PathBuf, source: io::Error },
    #[error("invalid server configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] ensemble_core::Error),
    #[error("server task failed: {0}")]
    Task(String),
}

#[derive(Debug, Clone)]
pub struct ServerConfig {
    pub osc_addr: SocketAddr,
    pub bridge_addr: Option<SocketAddr>,
    pub http_addr: Option<SocketAddr>,
    pub session: SessionConfig,
    /// Session seconds per wall-clock second. Values above 1 run the whole
    /// session faster, which is only useful for tests and demos.
    pub clock_rate: f64,
    /// Where session logs go; `None` disables logging.
    pub log_dir: Option<PathBuf>,
    pub session_id: Option<String>,
    /// Recorded in the log header so replays can find the model.
    pub model_path: Option<String>,
}

impl Default for ServerConfig {
    fn default() -> Self {
        ServerConfig {
            osc_addr: SocketAddr::from(([0, 0, 0, 0], DEFAULT_OSC_PORT)),
            bridge_addr: Some(SocketAddr::from(([0, 0, 0, 0], DEFAULT_BRIDGE_PORT))),
            http_addr: Some(SocketAddr::from(([0, 0, 0, 0], DEFAULT_HTTP_PORT))),
            session: SessionConfig::default(),
            clock_rate: 1.0,
            log_dir: Some(PathBuf::from("logs")),
            session_id: None,
            model_path: None,
        }
    }
}

impl ServerConfig {
    /// Everything on ephemeral localhost ports, no log. Handy for tests.
    pub fn loopback() -> Self {
        let any = SocketAddr::from(([127, 0, 0, 1], 0));
        ServerConfig {
            osc_addr: any,
            bridge_addr: Some(any),
            http_addr: Some(any),
            log_dir: None,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<(), ServerError> {
        if !(self.clock_rate > 0.0) || !self.clock_rate.is_finite() {
            return Err(ServerError::Config(format!(
                "clock rate must be positive, got {}",
                self.clock_rate
            )));
        }
        self.session.validate()?;
        Ok(())
    }
}

/// Maps wall-clock time onto session seconds.
#[derive(Debug, Clone, Copy)]
pub struct SessionClock {
    start: tokio::time::Instant,
    rate: f64,
}

impl SessionClock {
    pub fn start(rate: f64) -> Self {
        SessionClock {
            start: tokio::time::Instant::now(),
            rate,
        }
    }

    pub fn now(&self) -> f64 {
        self.start.elapsed().as_secs_f64() * self.rate
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    pub fn instant_at(&self, session_time: f64) -> tokio::time::Instant {
        self.start + Duration::from_secs_f64(session_time.max(0.0) / self.rate)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ServerSummary {
    pub session_id: String,
    pub ticks: u64,
    pub new_ideas: u64,
    pub overruns: u64,
    pub counters: Counters,
    pub log_path: Option<PathBuf>,
}

/// A running server. Dropping it without [`ServerHandle::shutdown`] aborts
/// the tasks without flushing the log.
pub struct ServerHandle {
    pub osc_addr: SocketAddr,
    pub bridge_addr: Option<SocketAddr>,
    pub http_addr: Option<SocketAddr>,
    pub session_id: String,
    pub log_path: Option<PathBuf>,
    status: Arc<RwLock<StatusBoard>>,
    shutdown_tx: watch::Sender<bool>,
    actor: Option<JoinHandle<Result<ServerSummary, ServerError>>>,
    tasks: Vec<JoinHandle<()>>,
}

impl ServerHandle {
    pub fn status(&self) -> SessionStatus {
        self.status.read().expect("status lock").status.clone()
    }

    /// Lets the current tick finish, flushes the log and stops every task.
    pub async fn shutdown(mut self) -> Result<ServerSummary, ServerError> {
        let _ = self.shutdown_tx.send(true);
        let actor = self.actor.take().expect("actor present until shutdown");
        let result = actor.await.map_err(|e| ServerError::Task(e.to_string()))?;
        for t in self.tasks.drain(..) {
            t.abort();
        }
        result
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        for t in &self.tasks {
            t.abort();
        }
        if let Some(a) = &self.actor {
            a.abort();
        }
    }
}

fn default_session_id() -> String {
    let now = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .unwrap_or_default();
    format!("{}-{}", now.as_millis(), std::process::id())
}

async fn bind_udp(addr: SocketAddr) -> Result<UdpSocket, ServerError> {
    UdpSocket::bind(addr)
        .await
        .map_err(|source| ServerError::PortUnavailable { addr, source })
}

async fn bind_tcp(addr: SocketAddr) -> Result<TcpListener, ServerError> {
    TcpListener::bind(addr)
        .await
        .map_err(|source| ServerError::PortUnavailable { addr, source })
}

/// Binds every port, opens the log and starts the tasks. Nothing is left
/// running if any step fails.
pub async fn start(
    config: ServerConfig,
    model: Arc<ForestModel>,
) -> Result<ServerHandle, ServerError> {
    config.validate()?;
    let udp = Arc::new(bind_udp(config.osc_addr).await?);
    let bridge = match config.bridge_addr {
        Some(a) => Some(bind_tcp(a).await?),
        None => None,
    };
    let http = match config.http_addr {
        Some(a) => Some(bind_tcp(a).await?),
        None => None,
    };
    let osc_addr = udp
        .local_addr()
        .map_err(|e| ServerError::Task(e.to_string()))?;
    let bridge_addr = bridge.as_ref().and_then(|l| l.local_addr().ok());
    let http_addr = http.as_ref().and_then(|l| l.local_addr().ok());

    let session_id = config.session_id.clone().unwrap_or_else(default_session_id);
    let session = Session::new(model.clone(), config.session)?;
    let started_unix = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .unwrap_or_default()
        .as_secs_f64();
    let (log, log_path) = match &config.log_dir {
        Some(dir) => {
            let log_err = |source| ServerError::Log {
                dir: dir.clone(),
                source,
            };
            std::fs::create_dir_all(dir).map_err(log_err)?;
            let path = dir.join(format!("session-{session_id}.jsonl"));
            let file = std::fs::File::create(&path).map_err(log_err)?;
            let mut header =
                LogHeader::new(session_id.clone(), started_unix, config.session, &model);
            header.model_path = config.model_path.clone();
            header.clock_rate = config.clock_rate;
            let writer = LogWriter::new(io::BufWriter::new(file), &header)?;
            (Some(writer), Some(path))
        }
        None => (None, None),
    };

    let clock = SessionClock::start(config.clock_rate);
    let (inbound_tx, inbound_rx) = mpsc::channel(transport::INBOUND_QUEUE);
    let (shutdown_tx, shutdown_rx) = watch::channel(false);
    let conn_ids = Arc::new(AtomicU64::new(1));
    let status = Arc::new(RwLock::new(StatusBoard::new(
        &session_id,
        &config,
        osc_addr,
        bridge_addr,
        log_path.as_deref(),
    )));

    let mut tasks = Vec::new();
    tasks.push(tokio::spawn(transport::udp_receiver(
        udp.clone(),
        inbound_tx.clone(),
        clock,
    )));
    if let Some(listener) = bridge {
        tasks.push(tokio::spawn(transport::bridge_acceptor(
            listener,
            inbound_tx.clone(),
            conn_ids.clone(),
            clock,
        )));
    }
    if let Some(listener) = http {
        let state = http::AppState {
            status: status.clone(),
            model: model.clone(),
            inbound: inbound_tx.clone(),
            conn_ids: conn_ids.clone(),
            clock,
        };
        let app = http::router(state);
        let mut stop = shutdown_rx.clone();
        tasks.push(tokio::spawn(async move {
            let graceful = async move {
                let _ = stop.wait_for(|&s| s).await;
            };
            if let Err(e) = axum::serve(listener, app)
                .with_graceful_shutdown(graceful)
                .await
            {
                tracing::error!("http server stopped: {e}");
            }
        }));
    }
    drop(inbound_tx);

    let actor = actor::Actor::new(
        session,
        clock,
        log,
        udp,
        status.clone(),
        inbound_rx,
        shutdown_rx,
        session_id.clone(),
        log_path.clone(),
    );
    let actor = tokio::spawn(actor.run());
    info!(%osc_addr, ?bridge_addr, ?http_addr, session = %session_id, "agent listening");

    Ok(ServerHandle {
        osc_addr,
        bridge_addr,
        http_addr,
        session_id,
        log_path,
        status,
        shutdown_tx,
        actor: Some(actor),
        tasks,
    })
}
