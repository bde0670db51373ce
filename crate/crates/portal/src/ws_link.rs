//! [`RemoteLink`] over a websocket connection to a portal.

use std::collections::HashMap;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex, Weak};
use std::time::Duration;

use async_trait::async_trait;
use cloudroid::protocol::{decode, encode_string, Envelope, Op, Payload, SlaDeclaration};
use cloudroid::stub::{KeepaliveDetector, LinkError, LinkStatus, RemoteLink};
use futures_util::{SinkExt, StreamExt};
use tokio::sync::{broadcast, mpsc, oneshot};
use tokio_tungstenite::tungstenite::client::IntoClientRequest;
use tokio_tungstenite::tungstenite::http::HeaderValue;
use tokio_tungstenite::tungstenite::Message;

struct Shared {
    out: mpsc::UnboundedSender<Message>,
    pending: Mutex<HashMap<String, oneshot::Sender<Envelope>>>,
    topics: broadcast::Sender<Envelope>,
    keepalive: Mutex<KeepaliveDetector>,
    open: AtomicBool,
}

impl Shared {
    fn send(&self, env: &Envelope) -> Result<(), LinkError> {
        if !self.open.load(Ordering::SeqCst) {
            return Err(LinkError::Closed);
        }
        self.out
            .send(Message::Text(encode_string(env).into()))
            .map_err(|_| LinkError::Closed)
    }

    fn dispatch(&self, env: Envelope) {
        match env.op {
            Op::Pong => self.keepalive.lock().unwrap().pong(),
            Op::Publish => {
                let _ = self.topics.send(env);
            }
            _ => {
                if let Some(tx) = self.pending.lock().unwrap().remove(&env.id) {
                    let _ = tx.send(env);
                } else if !env.id.is_empty() {
                    tracing::debug!(id = %env.id, "unmatched reply");
                }
            }
        }
    }

    fn closed(&self) {
        self.open.store(false, Ordering::SeqCst);
        // Dropping the senders fails every waiter with `Closed`.
        self.pending.lock().unwrap().clear();
    }
}

/// A portal session over `/ws`. Sends a ping every keepalive interval and
/// reports the link down after the configured number of missed pongs, or
/// once the socket closes.
#[derive(Clone)]
pub struct WsLink {
    shared: Arc<Shared>,
}

impl WsLink {
    pub async fn connect(url: &str, token: Option<&str>) -> Result<Self, LinkError> {
        Self::connect_with(url, token, KeepaliveDetector::default()).await
    }

    pub async fn connect_with(
        url: &str,
        token: Option<&str>,
        keepalive: KeepaliveDetector,
    ) -> Result<Self, LinkError> {
        let mut req = url
            .into_client_request()
            .map_err(|e| LinkError::Transport(e.to_string()))?;
        if let Some(t) = token {
            let v = HeaderValue::from_str(&format!("Bearer {t}"))
                .map_err(|e| LinkError::Transport(e.to_string()))?;
            req.headers_mut().insert("authorization", v);
        }
        let (socket, _) = tokio_tungstenite::connect_async(req)
            .await
            .map_err(|e| LinkError::Transport(e.to_string()))?;
        let (mut sink, mut stream) = socket.split();
        let (out, mut rx) = mpsc::unbounded_channel::<Message>();
        let (topics, _) = broadcast::channel(256);
        let interval = Duration::from_millis(keepalive.interval_ms.max(1));
        let shared = Arc::new(Shared {
            out,
            pending: Mutex::new(HashMap::new()),
            topics,
            keepalive: Mutex::new(keepalive),
            open: AtomicBool::new(true),
        });

        tokio::spawn(async move {
            while let Some(m) = rx.recv().await {
                let close = matches!(m, Message::Close(_));
                if sink.send(m).await.is_err() || close {
                    break;
                }
            }
        });

        let weak = Arc::downgrade(&shared);
        tokio::spawn(async move {
            while let Some(frame) = stream.next().await {
                let Some(shared) = weak.upgrade() else { return };
                match frame {
                    Ok(Message::Text(t)) => match decode(t.as_bytes()) {
                        Ok(env) => shared.dispatch(env),
                        Err(e) => tracing::warn!("portal sent a bad frame: {e}"),
                    },
                    Ok(Message::Close(_)) | Err(_) => break,
                    Ok(_) => {}
                }
            }
            if let Some(shared) = weak.upgrade() {
                shared.closed();
            }
        });

        tokio::spawn(keepalive_loop(Arc::downgrade(&shared), interval));
        Ok(WsLink { shared })
    }

    pub fn is_open(&self) -> bool {
        self.shared.open.load(Ordering::SeqCst)
    }

    pub fn close(&self) {
        let _ = self.shared.out.send(Message::Close(None));
        self.shared.closed();
    }

    async fn exchange(&self, env: Envelope) -> Result<Envelope, LinkError> {
        let (tx, rx) = oneshot::channel();
        self.shared
            .pending
            .lock()
            .unwrap()
            .insert(env.id.clone(), tx);
        if let Err(e) = self.shared.send(&env) {
            self.shared.pending.lock().unwrap().remove(&env.id);
            return Err(e);
        }
        rx.await.map_err(|_| LinkError::Closed)
    }
}

async fn keepalive_loop(weak: Weak<Shared>, interval: Duration) {
    let mut ticker = tokio::time::interval(interval);
    loop {
        ticker.tick().await;
        let Some(shared) = weak.upgrade() else { return };
        if !shared.open.load(Ordering::SeqCst) {
            return;
        }
        shared.keepalive.lock().unwrap().tick();
        let _ = shared.send(&Envelope::ping());
    }
}

#[async_trait]
impl RemoteLink for WsLink {
    async fn request_service(
        &self,
        id: String,
        service: &str,
        sla: SlaDeclaration,
    ) -> Result<Envelope, LinkError> {
        self.exchange(Envelope::request_service(id, service, sla))
            .await
    }

    async fn call(
        &self,
        id: String,
        target: &str,
        payload: Payload,
    ) -> Result<Envelope, LinkError> {
        self.exchange(Envelope::call(id, target, payload)).await
    }

    async fn publish(&self, topic: &str, payload: Payload) -> Result<(), LinkError> {
        self.shared.send(&Envelope::publish(topic, payload))
    }

    fn topics(&self) -> broadcast::Receiver<Envelope> {
        self.shared.topics.subscribe()
    }

    fn status(&self) -> LinkStatus {
        if self.is_open() {
            self.shared.keepalive.lock().unwrap().status()
        } else {
            LinkStatus::Down
        }
    }
}
