//! HTTP/WebSocket gateway: control commands, manual activation input, and a
//! live stream of cursor, target, prompt and trial-event messages.

mod hub;
mod lane;
pub mod messages;

use std::net::{IpAddr, Ipv4Addr, SocketAddr};
use std::path::PathBuf;
use std::sync::atomic::Ordering;
use std::sync::mpsc;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::{SinkExt, StreamExt};
use serde_json::json;
use sonomyo::session::{SessionConfig, SessionError};
use tokio::net::TcpListener;
use tokio::sync::oneshot;
use tokio::task::JoinHandle;

pub use hub::{ClientQueue, Hub};
pub use messages::{ActivationInput, ControlCommand, Phase, SessionSummary, Status, StreamMessage};

use lane::{Lane, Request, Shared};

/// Droppable messages buffered per client before the oldest are discarded.
pub const DEFAULT_QUEUE_CAPACITY: usize = 256;

#[derive(Debug, Clone)]
pub struct GatewayConfig {
    pub host: IpAddr,
    /// 0 picks a free port.
    pub port: u16,
    /// Pacing relative to the frame rate: 1 is real time, 0 runs unpaced.
    pub speed: f64,
    /// Where session logs go; falls back to the session's own output path.
    pub log_dir: Option<PathBuf>,
    pub queue_capacity: usize,
    pub session: SessionConfig,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        Self {
            host: IpAddr::V4(Ipv4Addr::LOCALHOST),
            port: sonomyo::session::default_port(),
            speed: 1.0,
            log_dir: None,
            queue_capacity: DEFAULT_QUEUE_CAPACITY,
            session: SessionConfig::default(),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum GatewayError {
    #[error("cannot bind {addr}: {source}")]
    Bind { addr: SocketAddr, source: std::io::Error },
    #[error("invalid gateway configuration: {0}")]
    Config(String),
    #[error("server error: {0}")]
    Serve(#[from] std::io::Error),
}

/// Rejection of a control or activation request.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ControlError {
    #[error("malformed request: {0}")]
    Malformed(String),
    #[error("{0}")]
    Illegal(String),
    #[error("{0}")]
    Invalid(String),
    #[error("{0}")]
    Failed(String),
    #[error("processing lane is gone")]
    Unavailable,
}

impl ControlError {
    fn code(&self) -> &'static str {
        match self {
            ControlError::Malformed(_) => "malformed",
            ControlError::Illegal(_) => "illegal_transition",
            ControlError::Invalid(_) => "invalid",
            ControlError::Failed(_) => "failed",
            ControlError::Unavailable => "unavailable",
        }
    }

    fn http_status(&self) -> StatusCode {
        match self {
            ControlError::Malformed(_) => StatusCode::BAD_REQUEST,
            ControlError::Illegal(_) => StatusCode::CONFLICT,
            ControlError::Invalid(_) => StatusCode::UNPROCESSABLE_ENTITY,
            ControlError::Failed(_) => StatusCode::INTERNAL_SERVER_ERROR,
            ControlError::Unavailable => StatusCode::SERVICE_UNAVAILABLE,
        }
    }
}

impl IntoResponse for ControlError {
    fn into_response(self) -> Response {
        let body = json!({ "ok": false, "error": { "code": self.code(), "message": self.to_string() } });
        (self.http_status(), Json(body)).into_response()
    }
}

#[derive(Clone)]
struct AppState {
    commands: mpsc::Sender<Request>,
    hub: Arc<Hub>,
    shared: Arc<Shared>,
}

fn parse<T: serde::de::DeserializeOwned>(body: &Bytes) -> Result<T, ControlError> {
    serde_json::from_slice(body).map_err(|e| ControlError::Malformed(e.to_string()))
}

async fn control(State(app): State<AppState>, body: Bytes) -> Result<Json<serde_json::Value>, ControlError> {
    let command: ControlCommand = parse(&body)?;
    let (reply, answer) = oneshot::channel();
    app.commands.send(Request { command, reply }).map_err(|_| ControlError::Unavailable)?;
    let status = answer.await.map_err(|_| ControlError::Unavailable)??;
    Ok(Json(json!({ "ok": true, "status": status })))
}

async fn activation(State(app): State<AppState>, body: Bytes) -> Result<Json<serde_json::Value>, ControlError> {
    let input: ActivationInput = parse(&body)?;
    if !app.shared.manual_enabled.load(Ordering::SeqCst) {
        let kind = app.shared.status().source;
        return Err(ControlError::Illegal(format!("activation input needs a manual source, not {kind}")));
    }
    app.shared.manual.set(input.value).map_err(|e| match e {
        SessionError::ActivationRange(_) => ControlError::Invalid(e.to_string()),
        e => ControlError::Failed(e.to_string()),
    })?;
    Ok(Json(json!({ "ok": true, "value": input.value })))
}

async fn stream(ws: WebSocketUpgrade, State(app): State<AppState>) -> Response {
    ws.on_upgrade(move |socket| client(socket, app))
}

async fn client(socket: WebSocket, app: AppState) {
    let queue = app.hub.subscribe();
    let status = StreamMessage::Status { timestamp: 0.0, status: app.shared.status() };
    if let Ok(text) = serde_json::to_string(&status) {
        queue.push(text.into(), true);
    }
    let (mut tx, mut rx) = socket.split();
    'session: loop {
        for text in queue.drain() {
            if tx.send(Message::Text(text.as_ref().into())).await.is_err() {
                break 'session;
            }
        }
        tokio::select! {
            _ = queue.ready() => {}
            incoming = rx.next() => match incoming {
                None | Some(Err(_)) | Some(Ok(Message::Close(_))) => break,
                Some(Ok(_)) => {}
            },
        }
    }
    app.hub.unsubscribe(&queue);
}

fn router(app: AppState) -> Router {
    Router::new()
        .route("/control", post(control))
        .route("/activation", post(activation))
        .route("/stream", get(stream))
        .with_state(app)
}

/// A gateway accepting connections in the background.
pub struct RunningGateway {
    addr: SocketAddr,
    server: JoinHandle<std::io::Result<()>>,
    hub: Arc<Hub>,
}

impl RunningGateway {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn hub(&self) -> &Arc<Hub> {
        &self.hub
    }

    /// Serves until the server task ends.
    pub async fn wait(self) -> Result<(), GatewayError> {
        match self.server.await {
            Ok(r) => r.map_err(GatewayError::from),
            Err(e) => Err(GatewayError::Serve(std::io::Error::other(e))),
        }
    }

    pub fn shutdown(self) {
        self.server.abort();
    }
}

/// Binds the listener, starts the processing lane and serves in the background.
pub async fn start(config: GatewayConfig) -> Result<RunningGateway, GatewayError> {
    if !(config.speed >= 0.0 && config.speed.is_finite()) {
        return Err(GatewayError::Config("speed must be a non-negative number".into()));
    }
    config.session.validate().map_err(|e| GatewayError::Config(e.to_string()))?;
    let addr = SocketAddr::new(config.host, config.port);
    let listener = TcpListener::bind(addr).await.map_err(|source| GatewayError::Bind { addr, source })?;
    let addr = listener.local_addr()?;

    let hub = Arc::new(Hub::new(config.queue_capacity));
    let shared = Arc::new(Shared::new(&config.session.source));
    let (commands, rx) = mpsc::channel();
    let lane = Lane::new(config.session, config.speed, config.log_dir, hub.clone(), shared.clone());
    std::thread::Builder::new().name("processing-lane".into()).spawn(move || lane.run(rx))?;

    let app = router(AppState { commands, hub: hub.clone(), shared });
    let server = tokio::spawn(async move { axum::serve(listener, app).await });
    tracing::info!(%addr, "gateway listening");
    Ok(RunningGateway { addr, server, hub })
}

/// Runs the gateway until the process is stopped.
pub async fn serve(config: GatewayConfig) -> Result<(), GatewayError> {
    start(config).await?.wait().await
}
