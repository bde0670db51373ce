//! A [`RemoteLink`] that talks to an in-process [`Portal`] session, with an
//! adjustable one-way delay and an up/down switch standing in for the
//! network.

use std::collections::HashMap;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use async_trait::async_trait;
use tokio::sync::{broadcast, oneshot};

use crate::portal::Portal;
use crate::protocol::{Envelope, Op, Payload, SlaDeclaration};
use crate::stub::{LinkError, LinkStatus, RemoteLink};

struct Shared {
    portal: Portal,
    session_id: String,
    pending: Mutex<HashMap<String, oneshot::Sender<Envelope>>>,
    topics: broadcast::Sender<Envelope>,
    up: AtomicBool,
    delay_us: AtomicU64,
}

/// Frames sent while the link is down are dropped, in both directions.
#[derive(Clone)]
pub struct InProcessLink {
    shared: Arc<Shared>,
}

impl InProcessLink {
    pub fn connect(portal: &Portal) -> Self {
        let handle = portal.open_session();
        let (topics, _) = broadcast::channel(256);
        let shared = Arc::new(Shared {
            portal: portal.clone(),
            session_id: handle.session_id,
            pending: Mutex::new(HashMap::new()),
            topics,
            up: AtomicBool::new(true),
            delay_us: AtomicU64::new(0),
        });
        let mut outbound = handle.outbound;
        let weak = Arc::downgrade(&shared);
        tokio::spawn(async move {
            while let Some(env) = outbound.recv().await {
                let Some(shared) = weak.upgrade() else { break };
                let delay = shared.delay();
                if delay.is_zero() {
                    shared.arrive(env);
                } else {
                    tokio::spawn(async move {
                        tokio::time::sleep(delay).await;
                        shared.arrive(env);
                    });
                }
            }
        });
        InProcessLink { shared }
    }

    pub fn session_id(&self) -> &str {
        &self.shared.session_id
    }

    pub fn set_up(&self, up: bool) {
        self.shared.up.store(up, Ordering::SeqCst);
    }

    /// One-way delay applied to each direction.
    pub fn set_delay_ms(&self, ms: f64) {
        self.shared
            .delay_us
            .store((ms.max(0.0) * 1000.0).round() as u64, Ordering::SeqCst);
    }

    pub async fn close(&self) {
        self.shared
            .portal
            .close_session(&self.shared.session_id)
            .await;
    }

    async fn exchange(&self, env: Envelope) -> Result<Envelope, LinkError> {
        let (tx, rx) = oneshot::channel();
        self.shared
            .pending
            .lock()
            .unwrap()
            .insert(env.id.clone(), tx);
        self.shared.transmit(env).await;
        rx.await.map_err(|_| LinkError::Closed)
    }
}

impl Shared {
    fn delay(&self) -> Duration {
        Duration::from_micros(self.delay_us.load(Ordering::SeqCst))
    }

    fn is_up(&self) -> bool {
        self.up.load(Ordering::SeqCst)
    }

    async fn transmit(&self, env: Envelope) {
        let delay = self.delay();
        if !delay.is_zero() {
            tokio::time::sleep(delay).await;
        }
        if self.is_up() {
            self.portal.handle(&self.session_id, env).await;
        }
    }

    fn arrive(&self, env: Envelope) {
        if !self.is_up() {
            return;
        }
        match env.op {
            Op::Publish => {
                let _ = self.topics.send(env);
            }
            Op::Pong | Op::Ping => {}
            _ => {
                if let Some(tx) = self.pending.lock().unwrap().remove(&env.id) {
                    let _ = tx.send(env);
                }
            }
        }
    }
}

#[async_trait]
impl RemoteLink for InProcessLink {
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
        if !self.shared.is_up() {
            return Err(LinkError::Down);
        }
        self.shared
            .transmit(Envelope::publish(topic, payload))
            .await;
        Ok(())
    }

    fn topics(&self) -> broadcast::Receiver<Envelope> {
        self.shared.topics.subscribe()
    }

    fn status(&self) -> LinkStatus {
        if self.shared.is_up() {
            LinkStatus::Up
        } else {
            LinkStatus::Down
        }
    }
}
