//! HTTP front end: `/ws` sessions plus the REST management API, all behind
//! a static bearer token.

use std::net::SocketAddr;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::{Path, Query, Request, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{delete, get, post};
use axum::{Json, Router};
use cloudroid::choreographer::ChoreographerError;
use cloudroid::manifest::ManifestError;
use cloudroid::portal::{DeployError, DeployOutcome, Portal, ServiceSummary};
use cloudroid::protocol::{encode_string, Envelope, ProtocolError, MAX_PAYLOAD_BYTES};
use futures_util::{SinkExt, StreamExt};
use serde::Deserialize;
use serde_json::json;
use tokio::net::TcpListener;
use tokio::sync::{oneshot, watch};
use tokio::task::JoinHandle;

use crate::config::{ConfigError, PortalConfig};

#[derive(Clone)]
struct AppState {
    portal: Portal,
    token: Arc<str>,
    stop: watch::Receiver<bool>,
}

fn error(status: StatusCode, code: &str, detail: impl Into<String>) -> Response {
    (
        status,
        Json(json!({"error": code, "detail": detail.into()})),
    )
        .into_response()
}

#[derive(Deserialize)]
struct TokenQuery {
    token: Option<String>,
}

async fn auth(
    State(s): State<AppState>,
    Query(q): Query<TokenQuery>,
    headers: HeaderMap,
    req: Request,
    next: Next,
) -> Response {
    let bearer = headers
        .get(header::AUTHORIZATION)
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.strip_prefix("Bearer "));
    // Browsers cannot set headers on websocket upgrades.
    let ok = bearer == Some(&*s.token) || q.token.as_deref() == Some(&*s.token);
    if !ok {
        return error(
            StatusCode::UNAUTHORIZED,
            "unauthorized",
            "missing or wrong bearer token",
        );
    }
    next.run(req).await
}

/// The full application. Open websocket sessions end when `stop` turns
/// true.
pub fn router(portal: Portal, token: &str, stop: watch::Receiver<bool>) -> Router {
    let state = AppState {
        portal,
        token: token.into(),
        stop,
    };
    Router::new()
        .route("/ws", get(ws))
        .route("/packages", post(deploy))
        .route("/services", get(services))
        .route("/services/{name}", get(service))
        .route("/servants", get(servants))
        .route("/servants/{id}", delete(terminate))
        .route("/stubs/{service}", get(stub))
        .route("/metrics", get(metrics))
        .layer(middleware::from_fn_with_state(state.clone(), auth))
        .with_state(state)
}

#[derive(Deserialize)]
struct DeployQuery {
    #[serde(default)]
    replace: bool,
}

async fn deploy(State(s): State<AppState>, Query(q): Query<DeployQuery>, body: Bytes) -> Response {
    match s.portal.deploy(&body, q.replace) {
        Ok((entry, outcome)) => {
            let status = match outcome {
                DeployOutcome::Unchanged => StatusCode::OK,
                _ => StatusCode::CREATED,
            };
            (
                status,
                Json(json!({"service": entry.service, "outcome": outcome})),
            )
                .into_response()
        }
        Err(DeployError::Conflict(name)) => error(
            StatusCode::CONFLICT,
            "conflict",
            format!("`{name}` is deployed with different content; use ?replace=true"),
        ),
        Err(DeployError::Manifest(e)) => {
            let code = match e {
                ManifestError::Syntax(_) => "syntax",
                _ => "validation",
            };
            (
                StatusCode::UNPROCESSABLE_ENTITY,
                Json(json!({"error": code, "detail": e.to_string(), "path": e.path()})),
            )
                .into_response()
        }
    }
}

async fn services(State(s): State<AppState>) -> Json<Vec<ServiceSummary>> {
    Json(
        s.portal
            .services()
            .iter()
            .map(|e| ServiceSummary::from(&**e))
            .collect(),
    )
}

async fn service(State(s): State<AppState>, Path(name): Path<String>) -> Response {
    match s.portal.service(&name) {
        Some(e) => Json(json!({
            "summary": ServiceSummary::from(&*e),
            "manifest": &*e.manifest,
        }))
        .into_response(),
        None => error(
            StatusCode::NOT_FOUND,
            "not_found",
            format!("no service `{name}`"),
        ),
    }
}

async fn servants(State(s): State<AppState>) -> Response {
    Json(s.portal.servants()).into_response()
}

async fn terminate(State(s): State<AppState>, Path(id): Path<String>) -> Response {
    match s.portal.terminate_servant(&id).await {
        Ok(_) => StatusCode::NO_CONTENT.into_response(),
        Err(ChoreographerError::UnknownServant(_)) => error(
            StatusCode::NOT_FOUND,
            "not_found",
            format!("no servant `{id}`"),
        ),
        Err(e) => error(StatusCode::CONFLICT, "conflict", e.to_string()),
    }
}

async fn stub(State(s): State<AppState>, Path(service): Path<String>) -> Response {
    match s.portal.stub(&service) {
        Some(bytes) => ([(header::CONTENT_TYPE, "application/json")], bytes).into_response(),
        None => error(
            StatusCode::NOT_FOUND,
            "not_found",
            format!("no stub for `{service}`"),
        ),
    }
}

async fn metrics(State(s): State<AppState>) -> Response {
    Json(s.portal.metrics()).into_response()
}

async fn ws(State(s): State<AppState>, upgrade: WebSocketUpgrade) -> Response {
    // Base64 and JSON framing on top of the payload limit.
    let limit = MAX_PAYLOAD_BYTES * 2;
    upgrade
        .max_message_size(limit)
        .max_frame_size(limit)
        .on_upgrade(move |socket| session(s.portal, socket, s.stop))
}

/// One connection is one session. Frames are handled in arrival order.
async fn session(portal: Portal, socket: WebSocket, mut stop: watch::Receiver<bool>) {
    let handle = portal.open_session();
    let id = handle.session_id;
    let mut outbound = handle.outbound;
    let (mut sink, mut stream) = socket.split();
    let writer = tokio::spawn(async move {
        while let Some(env) = outbound.recv().await {
            if sink
                .send(Message::Text(encode_string(&env).into()))
                .await
                .is_err()
            {
                break;
            }
        }
        let _ = sink.close().await;
    });
    tracing::debug!(session = %id, "session opened");
    loop {
        let msg = tokio::select! {
            m = stream.next() => match m {
                Some(Ok(m)) => m,
                _ => break,
            },
            _ = stop.wait_for(|s| *s) => break,
        };
        let raw: Bytes = match msg {
            Message::Text(t) => Bytes::copy_from_slice(t.as_bytes()),
            Message::Binary(b) => b,
            Message::Close(_) => break,
            Message::Ping(_) | Message::Pong(_) => continue,
        };
        match serde_json::from_slice::<Envelope>(&raw) {
            Ok(env) => portal.handle(&id, env).await,
            Err(e) => portal.malformed(&id, &ProtocolError::Malformed(e.to_string())),
        }
    }
    portal.close_session(&id).await;
    let _ = writer.await;
    tracing::debug!(session = %id, "session closed");
}

/// A portal bound to a socket and serving in the background.
pub struct RunningPortal {
    pub addr: SocketAddr,
    pub portal: Portal,
    shutdown: Option<oneshot::Sender<()>>,
    stop: watch::Sender<bool>,
    task: JoinHandle<std::io::Result<()>>,
}

impl RunningPortal {
    /// Binds `config.listen` and starts serving.
    pub async fn start(config: &PortalConfig) -> Result<Self, ConfigError> {
        let listener = TcpListener::bind(config.listen)
            .await
            .map_err(|e| ConfigError::Invalid(format!("bind {}: {e}", config.listen)))?;
        let addr = listener
            .local_addr()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        let url = config
            .public_url
            .clone()
            .unwrap_or_else(|| format!("ws://{addr}/ws"));
        let portal = config.build_portal(&url)?;
        let (stop, stop_rx) = watch::channel(false);
        let app = router(portal.clone(), &config.token, stop_rx);
        let (tx, rx) = oneshot::channel::<()>();
        let task = tokio::spawn(async move {
            axum::serve(listener, app)
                .with_graceful_shutdown(async {
                    let _ = rx.await;
                })
                .await
        });
        Ok(RunningPortal {
            addr,
            portal,
            shutdown: Some(tx),
            stop,
            task,
        })
    }

    pub fn http_url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn ws_url(&self) -> String {
        format!("ws://{}/ws", self.addr)
    }

    /// Serves until the task ends.
    pub async fn wait(self) -> std::io::Result<()> {
        self.task
            .await
            .unwrap_or_else(|e| Err(std::io::Error::other(e)))
    }

    /// Stops accepting connections and drops open sessions.
    pub async fn stop(mut self) {
        let _ = self.stop.send(true);
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        let _ = self.task.await;
    }
}
