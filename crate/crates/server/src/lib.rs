//! HTTP and WebSocket front end for live two-role sessions.
//!
//! Endpoints:
//! - `POST /session` creates a session; body `{"id"?, "seed"?, "config"?}`.
//! - `GET /session/{id}/join?role=influencer|coach` upgrades to a play socket.
//! - `GET /session/{id}/watch` upgrades to a read-only observer socket.
//! - `DELETE /session/{id}` ends a session and finalizes its log.
//! - `GET /health`.

mod error;
mod hub;

use std::future::Future;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{delete, get, post};
use axum::{Json, Router};
use futures_util::{SinkExt, StreamExt};
use serde::Deserialize;
use slalom_core::config::Config;
use slalom_core::session::Role;
use tokio::net::TcpListener;
use tokio::sync::{mpsc, oneshot};

pub use error::{CreateError, ServerError};
pub use hub::{CreatedSession, Hub, HubOptions};

/// Overrides `--log-dir` when set.
pub const LOG_DIR_ENV: &str = "SLALOM_LOG_DIR";

#[derive(Debug, Clone)]
pub struct ServerOptions {
    pub bind: SocketAddr,
    /// Defaults to `1 / dt`.
    pub tick_rate: Option<f64>,
    pub log_dir: PathBuf,
    pub config: Config,
    pub base_seed: u64,
}

impl ServerOptions {
    pub fn new(bind: SocketAddr, log_dir: PathBuf, config: Config) -> Self {
        Self {
            bind,
            tick_rate: None,
            log_dir,
            config,
            base_seed: 0,
        }
    }
}

pub struct Server {
    listener: TcpListener,
    hub: Arc<Hub>,
}

impl Server {
    pub async fn bind(options: ServerOptions) -> Result<Self, ServerError> {
        options.config.validate()?;
        let tick_rate = options.tick_rate.unwrap_or(1.0 / options.config.physics.dt);
        if !(tick_rate.is_finite() && tick_rate > 0.0) {
            return Err(ServerError::Options(format!(
                "tick rate must be positive, got {tick_rate}"
            )));
        }
        std::fs::create_dir_all(&options.log_dir).map_err(|source| ServerError::LogDir {
            path: options.log_dir.clone(),
            source,
        })?;
        let listener = TcpListener::bind(options.bind).await.map_err(|source| {
            if source.kind() == std::io::ErrorKind::AddrInUse {
                ServerError::AddrInUse(options.bind)
            } else {
                ServerError::Bind {
                    addr: options.bind,
                    source,
                }
            }
        })?;
        let hub = Hub::new(HubOptions {
            config: options.config,
            log_dir: options.log_dir,
            tick_rate,
            base_seed: options.base_seed,
        });
        Ok(Self { listener, hub })
    }

    pub fn local_addr(&self) -> std::io::Result<SocketAddr> {
        self.listener.local_addr()
    }

    pub fn hub(&self) -> Arc<Hub> {
        self.hub.clone()
    }

    /// Serves until `shutdown` resolves, then ends every session so each log
    /// gets its end marker.
    pub async fn run(
        self,
        shutdown: impl Future<Output = ()> + Send + 'static,
    ) -> Result<(), ServerError> {
        let hub = self.hub.clone();
        let app = router(self.hub);
        axum::serve(self.listener, app)
            .with_graceful_shutdown(async move {
                shutdown.await;
                tracing::info!("shutting down");
                hub.close_all().await;
            })
            .await
            .map_err(ServerError::Serve)
    }
}

pub fn router(hub: Arc<Hub>) -> Router {
    Router::new()
        .route("/health", get(|| async { "ok" }))
        .route("/session", post(create_session))
        .route("/session/{id}", delete(close_session))
        .route("/session/{id}/join", get(join))
        .route("/session/{id}/watch", get(watch))
        .with_state(hub)
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct CreateBody {
    id: Option<String>,
    seed: Option<u64>,
    config: Option<Config>,
}

fn error_json(status: StatusCode, message: impl std::fmt::Display) -> Response {
    (
        status,
        Json(serde_json::json!({ "error": message.to_string() })),
    )
        .into_response()
}

async fn create_session(State(hub): State<Arc<Hub>>, body: axum::body::Bytes) -> Response {
    let body: CreateBody = if body.iter().all(u8::is_ascii_whitespace) {
        CreateBody::default()
    } else {
        match serde_json::from_slice(&body) {
            Ok(b) => b,
            Err(e) => {
                return error_json(
                    StatusCode::BAD_REQUEST,
                    format!("invalid request body: {e}"),
                )
            }
        }
    };
    match hub.create(body.id, body.seed, body.config).await {
        Ok(created) => (StatusCode::CREATED, Json(created)).into_response(),
        Err(e @ CreateError::Duplicate(_)) => error_json(StatusCode::CONFLICT, e),
        Err(e @ (CreateError::Config(_) | CreateError::BadId(_))) => {
            error_json(StatusCode::BAD_REQUEST, e)
        }
        Err(e @ CreateError::Log(_)) => error_json(StatusCode::INTERNAL_SERVER_ERROR, e),
    }
}

async fn close_session(State(hub): State<Arc<Hub>>, Path(id): Path<String>) -> Response {
    if hub.close(&id).await {
        StatusCode::NO_CONTENT.into_response()
    } else {
        error_json(StatusCode::NOT_FOUND, format!("no session `{id}`"))
    }
}

#[derive(Debug, Deserialize)]
struct JoinQuery {
    role: String,
}

async fn join(
    State(hub): State<Arc<Hub>>,
    Path(id): Path<String>,
    Query(q): Query<JoinQuery>,
    ws: WebSocketUpgrade,
) -> Response {
    let role: Role = match q.role.parse() {
        Ok(r) => r,
        Err(e) => return error_json(StatusCode::BAD_REQUEST, e),
    };
    upgrade(hub, id, role, ws).await
}

async fn watch(
    State(hub): State<Arc<Hub>>,
    Path(id): Path<String>,
    ws: WebSocketUpgrade,
) -> Response {
    upgrade(hub, id, Role::Observer, ws).await
}

async fn upgrade(hub: Arc<Hub>, id: String, role: Role, ws: WebSocketUpgrade) -> Response {
    let Some(tx) = hub.sender(&id).await else {
        return error_json(StatusCode::NOT_FOUND, format!("no session `{id}`"));
    };
    ws.on_upgrade(move |socket| connection(socket, tx, role))
}

async fn connection(
    socket: WebSocket,
    session: mpsc::UnboundedSender<hub::LoopMsg>,
    requested: Role,
) {
    let (outbox, mut frames) = mpsc::channel::<String>(hub::OUTBOX);
    let (reply, assigned) = oneshot::channel();
    if session
        .send(hub::LoopMsg::Join {
            requested,
            outbox,
            reply,
        })
        .is_err()
    {
        return;
    }
    let Ok((conn, _role)) = assigned.await else {
        return;
    };
    let (mut sink, mut stream) = socket.split();
    let writer = tokio::spawn(async move {
        while let Some(frame) = frames.recv().await {
            if sink.send(Message::Text(frame.into())).await.is_err() {
                return;
            }
        }
        // The session ended: its loop dropped our outbox.
        let _ = sink.send(Message::Close(None)).await;
    });
    while let Some(Ok(msg)) = stream.next().await {
        match msg {
            Message::Text(text) => {
                if session
                    .send(hub::LoopMsg::Client {
                        conn,
                        text: Some(text.to_string()),
                    })
                    .is_err()
                {
                    break;
                }
            }
            Message::Binary(_) => {
                let _ = session.send(hub::LoopMsg::Client { conn, text: None });
            }
            Message::Close(_) => break,
            Message::Ping(_) | Message::Pong(_) => {}
        }
    }
    let _ = session.send(hub::LoopMsg::Leave { conn });
    let _ = writer.await;
}
