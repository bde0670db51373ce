//! Service portal core: catalog and stub repository, session handling, SLA
//! handshake, routing to servants and the management operations. Transport
//! agnostic; the websocket and REST front ends call into [`Portal`].

use std::collections::{BTreeMap, BTreeSet};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock, Weak};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio::sync::mpsc;

use crate::choreographer::{Choreographer, ChoreographerError, ServantRecord};
use crate::manifest::{
    parse_manifest, serialize_manifest, Direction, InterfaceSpec, ManifestError, PackageManifest,
};
use crate::protocol::{codes, Envelope, Op, ProtocolError, SlaDeclaration};
use crate::servant::{start_sandbox, ReplySink, Sandbox};
use crate::stubgen::{generate_stub, StubDescriptor};

#[derive(Debug, Clone)]
pub struct CatalogEntry {
    pub service: String,
    pub manifest: Arc<PackageManifest>,
    /// Canonical manifest bytes; equality of these decides conflicts.
    pub manifest_bytes: Vec<u8>,
    pub deployed_at_ms: u64,
    pub stub_descriptor: StubDescriptor,
    pub stub_bytes: Vec<u8>,
}

/// What `GET /services` lists per entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServiceSummary {
    pub deployed_at_ms: u64,
    pub interface: InterfaceSpec,
    pub service: String,
    pub stateful: bool,
    pub version: String,
}

impl From<&CatalogEntry> for ServiceSummary {
    fn from(e: &CatalogEntry) -> Self {
        ServiceSummary {
            deployed_at_ms: e.deployed_at_ms,
            interface: e.manifest.interface.clone(),
            service: e.service.clone(),
            stateful: e.manifest.stateful,
            version: e.manifest.version.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeployOutcome {
    Created,
    Unchanged,
    Replaced,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DeployError {
    #[error(transparent)]
    Manifest(#[from] ManifestError),
    #[error("service `{0}` is already deployed with different content")]
    Conflict(String),
}

/// Ordered lifecycle events, used to check on-demand instantiation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum PortalEvent {
    Deployed {
        seq: u64,
        service: String,
    },
    ServiceRequested {
        seq: u64,
        service: String,
        session: String,
    },
    ServantCreated {
        seq: u64,
        service: String,
        servant_id: String,
    },
    ServantReleased {
        seq: u64,
        service: String,
        servant_id: String,
    },
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetricsSnapshot {
    pub calls_routed: u64,
    pub envelopes_in: u64,
    pub errors_sent: u64,
    pub grants: u64,
    pub publishes_routed: u64,
    pub rejections: u64,
    pub servants: u64,
    pub services: u64,
    pub sessions_open: u64,
    pub sessions_total: u64,
}

#[derive(Default)]
struct Counters {
    calls_routed: AtomicU64,
    envelopes_in: AtomicU64,
    errors_sent: AtomicU64,
    grants: AtomicU64,
    publishes_routed: AtomicU64,
    rejections: AtomicU64,
    sessions_total: AtomicU64,
}

struct Session {
    granted: BTreeMap<String, String>,
    pending: BTreeSet<String>,
    outbound: mpsc::UnboundedSender<Envelope>,
}

struct Inner {
    portal_url: String,
    catalog: RwLock<BTreeMap<String, Arc<CatalogEntry>>>,
    choreographer: Mutex<Choreographer>,
    sandboxes: Mutex<BTreeMap<String, Arc<Sandbox>>>,
    sessions: Mutex<BTreeMap<String, Session>>,
    events: Mutex<Vec<PortalEvent>>,
    seq: AtomicU64,
    next_session: AtomicU64,
    counters: Counters,
}

/// Cheap to clone; all clones share state.
#[derive(Clone)]
pub struct Portal {
    inner: Arc<Inner>,
}

/// An open session. Everything the portal sends to the client arrives on
/// `outbound`, in send order.
pub struct SessionHandle {
    pub session_id: String,
    pub outbound: mpsc::UnboundedReceiver<Envelope>,
}

fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

impl Portal {
    pub fn new(choreographer: Choreographer, portal_url: impl Into<String>) -> Self {
        Portal {
            inner: Arc::new(Inner {
                portal_url: portal_url.into(),
                catalog: RwLock::new(BTreeMap::new()),
                choreographer: Mutex::new(choreographer),
                sandboxes: Mutex::new(BTreeMap::new()),
                sessions: Mutex::new(BTreeMap::new()),
                events: Mutex::new(Vec::new()),
                seq: AtomicU64::new(0),
                next_session: AtomicU64::new(1),
                counters: Counters::default(),
            }),
        }
    }

    pub fn portal_url(&self) -> &str {
        &self.inner.portal_url
    }

    fn record(&self, make: impl FnOnce(u64) -> PortalEvent) {
        let mut events = self.inner.events.lock().unwrap();
        let seq = self.inner.seq.fetch_add(1, Ordering::SeqCst);
        events.push(make(seq));
    }

    pub fn events(&self) -> Vec<PortalEvent> {
        self.inner.events.lock().unwrap().clone()
    }

    // ---- deployment and repositories ----

    /// Validates and catalogs a package. No servant is started.
    pub fn deploy(
        &self,
        manifest_bytes: &[u8],
        replace: bool,
    ) -> Result<(Arc<CatalogEntry>, DeployOutcome), DeployError> {
        let manifest = parse_manifest(manifest_bytes)?;
        let canonical = serialize_manifest(&manifest);
        let mut catalog = self.inner.catalog.write().unwrap();
        let outcome = match catalog.get(&manifest.name) {
            Some(existing) if existing.manifest_bytes == canonical => {
                return Ok((existing.clone(), DeployOutcome::Unchanged));
            }
            Some(_) if !replace => return Err(DeployError::Conflict(manifest.name.clone())),
            Some(_) => DeployOutcome::Replaced,
            None => DeployOutcome::Created,
        };
        let stub_descriptor = generate_stub(&manifest, &self.inner.portal_url);
        let entry = Arc::new(CatalogEntry {
            service: manifest.name.clone(),
            stub_bytes: stub_descriptor.to_bytes(),
            stub_descriptor,
            manifest_bytes: canonical,
            deployed_at_ms: now_ms(),
            manifest: Arc::new(manifest),
        });
        self.inner
            .choreographer
            .lock()
            .unwrap()
            .register_service(&entry.manifest);
        catalog.insert(entry.service.clone(), entry.clone());
        drop(catalog);
        self.record(|seq| PortalEvent::Deployed {
            seq,
            service: entry.service.clone(),
        });
        Ok((entry, outcome))
    }

    pub fn services(&self) -> Vec<Arc<CatalogEntry>> {
        self.inner
            .catalog
            .read()
            .unwrap()
            .values()
            .cloned()
            .collect()
    }

    pub fn service(&self, name: &str) -> Option<Arc<CatalogEntry>> {
        self.inner.catalog.read().unwrap().get(name).cloned()
    }

    /// Stored stub descriptor bytes.
    pub fn stub(&self, service: &str) -> Option<Vec<u8>> {
        self.service(service).map(|e| e.stub_bytes.clone())
    }

    pub fn servants(&self) -> Vec<ServantRecord> {
        self.inner
            .choreographer
            .lock()
            .unwrap()
            .servants()
            .cloned()
            .collect()
    }

    pub fn servant(&self, servant_id: &str) -> Option<ServantRecord> {
        self.inner
            .choreographer
            .lock()
            .unwrap()
            .servant(servant_id)
            .cloned()
    }

    /// Snapshot of per-node usage.
    pub fn nodes(&self) -> Vec<crate::choreographer::Node> {
        self.inner
            .choreographer
            .lock()
            .unwrap()
            .pool()
            .nodes()
            .to_vec()
    }

    /// Forced release from the management interface. Sessions still
    /// holding a grant get `no_grant` on their next call.
    pub async fn terminate_servant(
        &self,
        servant_id: &str,
    ) -> Result<ServantRecord, ChoreographerError> {
        let record = self
            .inner
            .choreographer
            .lock()
            .unwrap()
            .release_servant(servant_id)?;
        {
            let mut sessions = self.inner.sessions.lock().unwrap();
            for s in sessions.values_mut() {
                s.granted.retain(|_, id| id != servant_id);
            }
        }
        self.retire(std::slice::from_ref(&record)).await;
        Ok(record)
    }

    async fn retire(&self, records: &[ServantRecord]) {
        for r in records {
            let sandbox = self.inner.sandboxes.lock().unwrap().remove(&r.servant_id);
            if let Some(sb) = sandbox {
                sb.stop().await;
            }
            self.record(|seq| PortalEvent::ServantReleased {
                seq,
                service: r.service.clone(),
                servant_id: r.servant_id.clone(),
            });
        }
    }

    pub fn metrics(&self) -> MetricsSnapshot {
        let c = &self.inner.counters;
        let sessions_open = self.inner.sessions.lock().unwrap().len() as u64;
        let servants = self.inner.choreographer.lock().unwrap().servant_count() as u64;
        MetricsSnapshot {
            calls_routed: c.calls_routed.load(Ordering::Relaxed),
            envelopes_in: c.envelopes_in.load(Ordering::Relaxed),
            errors_sent: c.errors_sent.load(Ordering::Relaxed),
            grants: c.grants.load(Ordering::Relaxed),
            publishes_routed: c.publishes_routed.load(Ordering::Relaxed),
            rejections: c.rejections.load(Ordering::Relaxed),
            servants,
            services: self.inner.catalog.read().unwrap().len() as u64,
            sessions_open,
            sessions_total: c.sessions_total.load(Ordering::Relaxed),
        }
    }

    // ---- sessions ----

    pub fn open_session(&self) -> SessionHandle {
        let n = self.inner.next_session.fetch_add(1, Ordering::SeqCst);
        let session_id = format!("session-{n}");
        let (tx, rx) = mpsc::unbounded_channel();
        self.inner.sessions.lock().unwrap().insert(
            session_id.clone(),
            Session {
                granted: BTreeMap::new(),
                pending: BTreeSet::new(),
                outbound: tx,
            },
        );
        self.inner
            .counters
            .sessions_total
            .fetch_add(1, Ordering::Relaxed);
        SessionHandle {
            session_id,
            outbound: rx,
        }
    }

    /// Releases everything the session holds.
    pub async fn close_session(&self, session_id: &str) {
        let removed = self.inner.sessions.lock().unwrap().remove(session_id);
        if removed.is_none() {
            return;
        }
        let released = self
            .inner
            .choreographer
            .lock()
            .unwrap()
            .session_closed(session_id);
        self.retire(&released).await;
    }

    pub fn session_grants(&self, session_id: &str) -> BTreeMap<String, String> {
        self.inner
            .sessions
            .lock()
            .unwrap()
            .get(session_id)
            .map(|s| s.granted.clone())
            .unwrap_or_default()
    }

    fn send(&self, session_id: &str, env: Envelope) {
        Inner::send(&self.inner, session_id, env)
    }

    fn reject(&self, session_id: &str, env: &Envelope, code: &str, detail: impl Into<String>) {
        self.send(
            session_id,
            Envelope::error(env.id.clone(), env.target.clone(), code, detail),
        );
    }

    /// Answers a frame that did not parse as an envelope.
    pub fn malformed(&self, session_id: &str, err: &ProtocolError) {
        self.inner
            .counters
            .envelopes_in
            .fetch_add(1, Ordering::Relaxed);
        self.send(session_id, err.to_envelope());
    }

    /// Processes one decoded client envelope. Replies, including
    /// asynchronous servant responses, go to the session's outbound queue.
    pub async fn handle(&self, session_id: &str, env: Envelope) {
        self.inner
            .counters
            .envelopes_in
            .fetch_add(1, Ordering::Relaxed);
        if let Err(detail) = env.check() {
            self.reject(session_id, &env, codes::INVARIANT, detail);
            return;
        }
        match env.op {
            Op::Ping => self.send(session_id, Envelope::pong()),
            Op::Pong => {}
            Op::RequestService => {
                let reply = self.handle_request_service(session_id, &env).await;
                self.send(session_id, reply);
            }
            Op::Call | Op::Publish => self.route(session_id, env),
            Op::ServiceGranted | Op::Response | Op::Error => self.reject(
                session_id,
                &env,
                codes::UNEXPECTED_OP,
                format!("clients may not send {:?}", env.op),
            ),
        }
    }

    /// SLA handshake. A repeated request for a service already granted on
    /// this session drops the old grant first, so a stateful service gets
    /// a fresh servant with fresh state.
    pub async fn handle_request_service(&self, session_id: &str, env: &Envelope) -> Envelope {
        let service = env.target.clone();
        let sla: SlaDeclaration = match env.sla {
            Some(s) => s,
            None => {
                return Envelope::error(env.id.clone(), service, codes::INVARIANT, "sla missing")
            }
        };
        let Some(entry) = self.service(&service) else {
            self.inner
                .counters
                .rejections
                .fetch_add(1, Ordering::Relaxed);
            return Envelope::error(
                env.id.clone(),
                service.clone(),
                codes::UNKNOWN_SERVICE,
                format!("`{service}` is not deployed"),
            );
        };
        self.record(|seq| PortalEvent::ServiceRequested {
            seq,
            service: service.clone(),
            session: session_id.to_string(),
        });

        let previous = self
            .inner
            .sessions
            .lock()
            .unwrap()
            .get_mut(session_id)
            .and_then(|s| s.granted.remove(&service));
        if let Some(old) = previous {
            let released = self
                .inner
                .choreographer
                .lock()
                .unwrap()
                .detach(&old, session_id);
            if let Ok(Some(r)) = released {
                self.retire(&[r]).await;
            }
        }

        let grant = self
            .inner
            .choreographer
            .lock()
            .unwrap()
            .instantiate_servant(&service, session_id, &sla);
        let grant = match grant {
            Ok(g) => g,
            Err(e) => {
                self.inner
                    .counters
                    .rejections
                    .fetch_add(1, Ordering::Relaxed);
                let code = match e {
                    ChoreographerError::InsufficientResources { .. } => {
                        codes::INSUFFICIENT_RESOURCES
                    }
                    ChoreographerError::UnknownService(_) => codes::UNKNOWN_SERVICE,
                    _ => codes::WORKLOAD,
                };
                return Envelope::error(env.id.clone(), service, code, e.to_string());
            }
        };
        let servant_id = grant.record.servant_id.clone();
        if grant.created {
            self.record(|seq| PortalEvent::ServantCreated {
                seq,
                service: service.clone(),
                servant_id: servant_id.clone(),
            });
            match start_sandbox(&grant.record, entry.manifest.clone()).await {
                Ok(sb) => {
                    self.inner
                        .sandboxes
                        .lock()
                        .unwrap()
                        .insert(servant_id.clone(), Arc::new(sb));
                    let _ = self
                        .inner
                        .choreographer
                        .lock()
                        .unwrap()
                        .mark_running(&servant_id);
                }
                Err(e) => {
                    let _ = self
                        .inner
                        .choreographer
                        .lock()
                        .unwrap()
                        .release_servant(&servant_id);
                    self.record(|seq| PortalEvent::ServantReleased {
                        seq,
                        service: service.clone(),
                        servant_id: servant_id.clone(),
                    });
                    self.inner
                        .counters
                        .rejections
                        .fetch_add(1, Ordering::Relaxed);
                    return Envelope::error(
                        env.id.clone(),
                        service,
                        codes::WORKLOAD,
                        e.to_string(),
                    );
                }
            }
        }

        let still_open = match self.inner.sessions.lock().unwrap().get_mut(session_id) {
            Some(s) => {
                s.granted.insert(service.clone(), servant_id.clone());
                true
            }
            None => false,
        };
        if !still_open {
            let released = self
                .inner
                .choreographer
                .lock()
                .unwrap()
                .detach(&servant_id, session_id);
            if let Ok(Some(r)) = released {
                self.retire(&[r]).await;
            }
        }
        self.inner.counters.grants.fetch_add(1, Ordering::Relaxed);
        Envelope::granted(env.id.clone(), service, servant_id)
    }

    /// Forwards a call or publish to the servant granted for the service
    /// that owns `target`.
    pub fn route(&self, session_id: &str, env: Envelope) {
        let matches = |m: &PackageManifest| match env.op {
            Op::Call => m.interface.rpc(&env.target).is_some(),
            _ => m
                .interface
                .topic(&env.target)
                .is_some_and(|t| t.direction == Direction::Inbound),
        };
        let granted = self.session_grants(session_id);
        let catalog = self.services();
        let via_grant = granted.iter().find_map(|(service, servant)| {
            catalog
                .iter()
                .find(|e| &e.service == service && matches(&e.manifest))
                .map(|_| servant.clone())
        });
        let Some(servant_id) = via_grant else {
            if catalog.iter().any(|e| matches(&e.manifest)) {
                self.reject(
                    session_id,
                    &env,
                    codes::NO_GRANT,
                    format!("no grant covers `{}`", env.target),
                );
            } else {
                self.reject(
                    session_id,
                    &env,
                    codes::UNKNOWN_TARGET,
                    format!("no deployed service has `{}`", env.target),
                );
            }
            return;
        };
        let sandbox = self
            .inner
            .sandboxes
            .lock()
            .unwrap()
            .get(&servant_id)
            .cloned();
        let Some(sandbox) = sandbox else {
            self.reject(
                session_id,
                &env,
                codes::NO_GRANT,
                format!("servant `{servant_id}` is gone"),
            );
            return;
        };
        if env.op == Op::Call {
            if let Some(s) = self.inner.sessions.lock().unwrap().get_mut(session_id) {
                s.pending.insert(env.id.clone());
            }
            self.inner
                .counters
                .calls_routed
                .fetch_add(1, Ordering::Relaxed);
        } else {
            self.inner
                .counters
                .publishes_routed
                .fetch_add(1, Ordering::Relaxed);
        }
        let weak: Weak<Inner> = Arc::downgrade(&self.inner);
        let caller = session_id.to_string();
        let sink: ReplySink = Arc::new(move |reply: Envelope| {
            if let Some(inner) = weak.upgrade() {
                Inner::deliver(&inner, &caller, &servant_id, reply);
            }
        });
        sandbox.submit(env, sink);
    }

    /// Call ids routed on the session and not yet answered.
    pub fn pending(&self, session_id: &str) -> BTreeSet<String> {
        self.inner
            .sessions
            .lock()
            .unwrap()
            .get(session_id)
            .map(|s| s.pending.clone())
            .unwrap_or_default()
    }
}

impl Inner {
    fn send(this: &Arc<Inner>, session_id: &str, env: Envelope) {
        if env.op == Op::Error {
            this.counters.errors_sent.fetch_add(1, Ordering::Relaxed);
        }
        if let Some(s) = this.sessions.lock().unwrap().get(session_id) {
            let _ = s.outbound.send(env);
        }
    }

    /// Responses go back to the caller; outbound topic traffic goes to
    /// every session attached to the servant.
    fn deliver(this: &Arc<Inner>, caller: &str, servant_id: &str, reply: Envelope) {
        match reply.op {
            Op::Publish => {
                let attached: Vec<String> = this
                    .choreographer
                    .lock()
                    .unwrap()
                    .servant(servant_id)
                    .map(|r| r.sessions.iter().cloned().collect())
                    .unwrap_or_default();
                for s in attached {
                    Inner::send(this, &s, reply.clone());
                }
            }
            _ => {
                if let Some(s) = this.sessions.lock().unwrap().get_mut(caller) {
                    s.pending.remove(&reply.id);
                }
                Inner::send(this, caller, reply);
            }
        }
    }
}
