use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio::sync::broadcast;
use tokio::task::JoinSet;
use tokio::time::Instant;

use super::keepalive::LinkStatus;
use super::policy::{FailoverAction, Mode, StubPolicy};
use super::satisfaction::{Action, RemoteTime, SatisfactionState};
use crate::manifest::{PackageManifest, ResourceQuota};
use crate::protocol::{CodecError, Envelope, Op, Payload, SlaDeclaration};
use crate::schema::SchemaValue;
use crate::servant::{ReplySink, Sandbox, WorkloadLaunchError};
use crate::stubgen::StubDescriptor;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LinkError {
    #[error("link is down")]
    Down,
    #[error("connection closed")]
    Closed,
    #[error("transport error: {0}")]
    Transport(String),
}

/// The stub's view of the portal connection.
#[async_trait]
pub trait RemoteLink: Send + Sync + 'static {
    /// Sends `request_service` and returns the portal's answer, either
    /// `service_granted` or `error`.
    async fn request_service(
        &self,
        id: String,
        service: &str,
        sla: SlaDeclaration,
    ) -> Result<Envelope, LinkError>;

    /// Sends a call and waits for the envelope answering `id`.
    async fn call(&self, id: String, target: &str, payload: Payload)
        -> Result<Envelope, LinkError>;

    async fn publish(&self, topic: &str, payload: Payload) -> Result<(), LinkError>;

    /// Outbound topic traffic pushed by the portal.
    fn topics(&self) -> broadcast::Receiver<Envelope>;

    fn status(&self) -> LinkStatus;
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StubError {
    #[error("service down and no local fallback")]
    ServiceDown,
    #[error("local copy failed to launch: {0}")]
    LocalLaunch(#[from] WorkloadLaunchError),
    #[error("`{0}` is not an rpc of this service")]
    UnknownTarget(String),
    #[error("payload: {0}")]
    Codec(#[from] CodecError),
    #[error("{code}: {detail}")]
    Remote { code: String, detail: String },
    #[error("service request rejected: {code}: {detail}")]
    Rejected { code: String, detail: String },
    #[error("configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Winner {
    Remote,
    Local,
}

impl Winner {
    pub fn as_str(self) -> &'static str {
        match self {
            Winner::Remote => "remote",
            Winner::Local => "local",
        }
    }
}

/// One request as seen by the stub once its remote leg settled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RequestRecord {
    pub index: u64,
    /// `None` when the request never went to the cloud.
    pub t_remote: Option<RemoteTime>,
    pub t_local_ms: Option<f64>,
    pub winner: Winner,
    /// Satisfaction after this request; `None` when it did not move.
    pub q_after: Option<f64>,
    pub action: Action,
}

impl RequestRecord {
    /// Latency the caller observed.
    pub fn serving_ms(&self, timeout_ms: f64) -> f64 {
        match self.winner {
            Winner::Local => self.t_local_ms.unwrap_or(f64::NAN),
            Winner::Remote => match self.t_remote {
                Some(RemoteTime::Completed(ms)) => ms,
                Some(RemoteTime::TimedOut) => timeout_ms,
                None => f64::NAN,
            },
        }
    }
}

/// What [`Stub::invoke`] hands back to the caller.
#[derive(Debug, Clone, PartialEq)]
pub struct RequestOutcome {
    pub request_id: String,
    /// Known only if the remote leg settled before the result was delivered.
    pub t_remote: Option<RemoteTime>,
    pub t_local_ms: Option<f64>,
    pub winner: Winner,
    pub payload: Payload,
    pub latency_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StubConfig {
    pub t_desire_ms: Option<u32>,
    pub t_max_ms: Option<u32>,
    pub q_threshold: Option<u32>,
    /// Ask for this quota instead of the time-based SLA lookup.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resources: Option<ResourceQuota>,
    pub local_cpu_millicores: u32,
    pub local_memory_mb: u32,
}

impl Default for StubConfig {
    fn default() -> Self {
        StubConfig {
            t_desire_ms: None,
            t_max_ms: None,
            q_threshold: None,
            resources: None,
            local_cpu_millicores: 1000,
            local_memory_mb: 512,
        }
    }
}

impl StubConfig {
    pub fn with_times(t_desire_ms: u32, t_max_ms: u32) -> Self {
        StubConfig {
            t_desire_ms: Some(t_desire_ms),
            t_max_ms: Some(t_max_ms),
            ..Default::default()
        }
    }
}

struct Inner {
    descriptor: StubDescriptor,
    local_manifest: Option<Arc<PackageManifest>>,
    local_quota: ResourceQuota,
    sla: SlaDeclaration,
    link: Arc<dyn RemoteLink>,
    policy: Mutex<StubPolicy>,
    local: tokio::sync::Mutex<Option<Arc<Sandbox>>>,
    granted: AtomicBool,
    next_id: AtomicU64,
    settling: Mutex<JoinSet<()>>,
    trace: Mutex<Vec<RequestRecord>>,
    topics: broadcast::Sender<Envelope>,
}

/// Client-side proxy with the same RPC surface as the wrapped package.
#[derive(Clone)]
pub struct Stub {
    inner: Arc<Inner>,
}

struct RemoteLeg {
    t: RemoteTime,
    answer: Option<Envelope>,
}

impl Stub {
    /// Builds a stub and asks the portal for a servant. A rejected or
    /// unreachable portal is tolerated when a local fallback exists.
    pub async fn connect(
        descriptor: StubDescriptor,
        config: StubConfig,
        link: Arc<dyn RemoteLink>,
    ) -> Result<Stub, StubError> {
        let t_desire = config
            .t_desire_ms
            .or(descriptor.defaults.t_desire_ms)
            .ok_or_else(|| StubError::Config("t_desire_ms not set".into()))?;
        let t_max = config
            .t_max_ms
            .or(descriptor.defaults.t_max_ms)
            .ok_or_else(|| StubError::Config("t_max_ms not set".into()))?;
        if t_desire == 0 || t_desire > t_max {
            return Err(StubError::Config("need 0 < t_desire_ms <= t_max_ms".into()));
        }
        let q_threshold = config
            .q_threshold
            .unwrap_or(descriptor.defaults.q_threshold);
        let local_quota = ResourceQuota::new(config.local_cpu_millicores, config.local_memory_mb);
        let local_manifest = descriptor.local_fallback.clone().map(|workload| {
            Arc::new(PackageManifest {
                name: descriptor.service.clone(),
                version: "0.0.0".into(),
                stateful: descriptor.stateful,
                interface: descriptor.interface.clone(),
                workload,
                default_resources: local_quota,
            })
        });
        let policy = StubPolicy::new(
            SatisfactionState::new(q_threshold, t_desire, t_max),
            descriptor.stateful,
            local_manifest.is_some(),
        );
        let (topics, _) = broadcast::channel(256);
        let inner = Arc::new(Inner {
            descriptor,
            local_manifest,
            local_quota,
            sla: match config.resources {
                Some(q) => SlaDeclaration::resources(q),
                None => SlaDeclaration::times(t_desire, t_max),
            },
            link,
            policy: Mutex::new(policy),
            local: tokio::sync::Mutex::new(None),
            granted: AtomicBool::new(false),
            next_id: AtomicU64::new(0),
            settling: Mutex::new(JoinSet::new()),
            trace: Mutex::new(Vec::new()),
            topics,
        });

        let mut upstream = inner.link.topics();
        let forward = inner.topics.clone();
        tokio::spawn(async move {
            loop {
                match upstream.recv().await {
                    Ok(env) => {
                        let _ = forward.send(env);
                    }
                    Err(broadcast::error::RecvError::Lagged(_)) => continue,
                    Err(broadcast::error::RecvError::Closed) => break,
                }
            }
        });

        let stub = Stub { inner };
        match stub.ensure_grant().await {
            Ok(()) => {}
            Err(e) if stub.inner.local_manifest.is_some() => {
                let _ = e;
            }
            Err(e) => return Err(e),
        }
        Ok(stub)
    }

    pub fn descriptor(&self) -> &StubDescriptor {
        &self.inner.descriptor
    }

    pub fn satisfaction(&self) -> SatisfactionState {
        *self.inner.policy.lock().unwrap().satisfaction()
    }

    pub fn mode(&self) -> Mode {
        self.inner.policy.lock().unwrap().mode()
    }

    pub fn is_granted(&self) -> bool {
        self.inner.granted.load(Ordering::SeqCst)
    }

    pub async fn local_copy_running(&self) -> bool {
        self.inner.local.lock().await.is_some()
    }

    /// Outbound topic traffic, from the cloud or from the local copy.
    pub fn subscribe(&self) -> broadcast::Receiver<Envelope> {
        self.inner.topics.subscribe()
    }

    /// Records of every settled request, ordered by issue.
    pub fn trace(&self) -> Vec<RequestRecord> {
        let mut t = self.inner.trace.lock().unwrap().clone();
        t.sort_by_key(|r| r.index);
        t
    }

    /// Waits until every remote leg still in flight has settled.
    pub async fn quiesce(&self) {
        loop {
            let mut set = std::mem::take(&mut *self.inner.settling.lock().unwrap());
            if set.is_empty() {
                return;
            }
            while set.join_next().await.is_some() {}
        }
    }

    async fn ensure_grant(&self) -> Result<(), StubError> {
        if self.inner.granted.load(Ordering::SeqCst) {
            return Ok(());
        }
        if self.inner.link.status() == LinkStatus::Down {
            return Err(StubError::ServiceDown);
        }
        let id = self.fresh_id();
        let timeout = Duration::from_secs_f64(self.satisfaction().timeout_ms() / 1000.0);
        let answer = tokio::time::timeout(
            timeout,
            self.inner
                .link
                .request_service(id, &self.inner.descriptor.service, self.inner.sla),
        )
        .await
        .map_err(|_| StubError::ServiceDown)?
        .map_err(|_| StubError::ServiceDown)?;
        match answer.op {
            Op::ServiceGranted => {
                self.inner.granted.store(true, Ordering::SeqCst);
                Ok(())
            }
            _ => {
                let (code, detail) = answer
                    .status
                    .map(|s| (s.code, s.detail))
                    .unwrap_or_default();
                Err(StubError::Rejected { code, detail })
            }
        }
    }

    fn fresh_id(&self) -> String {
        format!("s{}", self.inner.next_id.fetch_add(1, Ordering::SeqCst))
    }

    /// Polls the link status and applies the failover rules.
    pub async fn failover_tick(&self) -> Result<FailoverAction, StubError> {
        let status = self.inner.link.status();
        let action = self.inner.policy.lock().unwrap().on_link(status);
        match action {
            FailoverAction::EnterFailover => {
                self.local_sandbox().await?;
            }
            FailoverAction::Resume {
                regrant,
                stop_local,
            } => {
                if regrant {
                    self.inner.granted.store(false, Ordering::SeqCst);
                }
                if stop_local {
                    self.stop_local().await;
                }
            }
            FailoverAction::None | FailoverAction::Unavailable => {}
        }
        Ok(action)
    }

    async fn local_sandbox(&self) -> Result<Arc<Sandbox>, StubError> {
        Inner::local_sandbox(&self.inner).await
    }

    async fn stop_local(&self) {
        Inner::stop_local(&self.inner).await
    }

    /// Calls `target` exactly like the original package would be called.
    pub async fn invoke(
        &self,
        target: &str,
        value: &SchemaValue,
    ) -> Result<RequestOutcome, StubError> {
        let rpc = self
            .inner
            .descriptor
            .interface
            .rpc(target)
            .ok_or_else(|| StubError::UnknownTarget(target.to_string()))?;
        if rpc.request_schema != value.schema() {
            return Err(StubError::Codec(CodecError::Schema(
                crate::schema::SchemaError::Malformed {
                    schema: rpc.request_schema,
                    detail: format!("got a {} value", value.schema()),
                },
            )));
        }
        let payload = Payload::from_value(value, self.inner.descriptor.codec_for(value.schema()));
        self.invoke_payload(target, payload).await
    }

    /// Like [`invoke`](Self::invoke) with an already encoded payload.
    pub async fn invoke_payload(
        &self,
        target: &str,
        payload: Payload,
    ) -> Result<RequestOutcome, StubError> {
        if self.inner.descriptor.interface.rpc(target).is_none() {
            return Err(StubError::UnknownTarget(target.to_string()));
        }
        self.failover_tick().await?;
        let index = self.inner.next_id.fetch_add(1, Ordering::SeqCst);
        let request_id = format!("r{index}");
        let issued = Instant::now();

        let mut plan = self.inner.policy.lock().unwrap().plan();
        if plan.remote && self.ensure_grant().await.is_err() {
            if self.inner.local_manifest.is_none() {
                return Err(StubError::ServiceDown);
            }
            plan.remote = false;
            plan.local = true;
        }

        if !plan.remote {
            if !plan.local {
                return Err(StubError::ServiceDown);
            }
            let (answer, t_local) = self.run_local(&request_id, target, payload, issued).await?;
            self.inner.trace.lock().unwrap().push(RequestRecord {
                index,
                t_remote: None,
                t_local_ms: Some(t_local),
                winner: Winner::Local,
                q_after: None,
                action: Action::None,
            });
            return finish(
                request_id,
                None,
                Some(t_local),
                Winner::Local,
                answer,
                t_local,
            );
        }

        let (remote_tx, mut remote_rx) = tokio::sync::oneshot::channel::<RemoteLeg>();
        let (race_tx, race_rx) = tokio::sync::oneshot::channel::<(Winner, Option<f64>)>();
        {
            let inner = self.inner.clone();
            let id = request_id.clone();
            let target = target.to_string();
            let payload = payload.clone();
            let timeout_ms = self.satisfaction().timeout_ms();
            self.inner.settling.lock().unwrap().spawn(async move {
                let leg = tokio::time::timeout(
                    Duration::from_secs_f64(timeout_ms / 1000.0),
                    inner.link.call(id, &target, payload),
                )
                .await;
                let leg = match leg {
                    Ok(Ok(env)) => RemoteLeg {
                        t: RemoteTime::Completed(ms_since(issued)),
                        answer: Some(env),
                    },
                    _ => RemoteLeg {
                        t: RemoteTime::TimedOut,
                        answer: None,
                    },
                };
                let t = leg.t;
                let _ = remote_tx.send(leg);
                let (action, q_after) = {
                    let mut policy = inner.policy.lock().unwrap();
                    let action = policy.on_remote_settled(t);
                    (action, policy.satisfaction().q)
                };
                match action {
                    Action::StartLocal => {
                        let _ = Inner::local_sandbox(&inner).await;
                    }
                    Action::StopLocal => Inner::stop_local(&inner).await,
                    Action::None => {}
                }
                let (winner, t_local_ms) = race_rx.await.unwrap_or((Winner::Remote, None));
                inner.trace.lock().unwrap().push(RequestRecord {
                    index,
                    t_remote: Some(t),
                    t_local_ms,
                    winner,
                    q_after: Some(q_after),
                    action,
                });
            });
        }

        let result = if plan.local {
            let local = self.run_local(&request_id, target, payload.clone(), issued);
            tokio::pin!(local);
            tokio::select! {
                leg = &mut remote_rx => match leg {
                    Ok(RemoteLeg { t, answer: Some(answer) }) => Ok((Winner::Remote, answer, Some(t), None)),
                    _ => local.await.map(|(a, tl)| (Winner::Local, a, Some(RemoteTime::TimedOut), Some(tl))),
                },
                done = &mut local => match done {
                    Ok((answer, tl)) => Ok((Winner::Local, answer, None, Some(tl))),
                    Err(e) => match remote_rx.await {
                        Ok(RemoteLeg { t, answer: Some(answer) }) => Ok((Winner::Remote, answer, Some(t), None)),
                        _ => Err(e),
                    },
                },
            }
        } else {
            match remote_rx.await {
                Ok(RemoteLeg {
                    t,
                    answer: Some(answer),
                }) => Ok((Winner::Remote, answer, Some(t), None)),
                _ if self.inner.local_manifest.is_some() => self
                    .run_local(&request_id, target, payload, issued)
                    .await
                    .map(|(a, tl)| (Winner::Local, a, Some(RemoteTime::TimedOut), Some(tl))),
                _ => Err(StubError::ServiceDown),
            }
        };

        match result {
            Ok((winner, answer, t_remote, t_local)) => {
                let _ = race_tx.send((winner, t_local));
                finish(
                    request_id,
                    t_remote,
                    t_local,
                    winner,
                    answer,
                    ms_since(issued),
                )
            }
            Err(e) => {
                let _ = race_tx.send((Winner::Local, None));
                Err(e)
            }
        }
    }

    /// Publishes to an inbound topic of the service.
    pub async fn publish(&self, topic: &str, value: &SchemaValue) -> Result<(), StubError> {
        if self.inner.descriptor.interface.topic(topic).is_none() {
            return Err(StubError::UnknownTarget(topic.to_string()));
        }
        self.failover_tick().await?;
        let payload = Payload::from_value(value, self.inner.descriptor.codec_for(value.schema()));
        let mode = self.mode();
        if mode == Mode::Normal
            && self.ensure_grant().await.is_ok()
            && self
                .inner
                .link
                .publish(topic, payload.clone())
                .await
                .is_ok()
        {
            return Ok(());
        }
        if self.inner.local_manifest.is_none() {
            return Err(StubError::ServiceDown);
        }
        let sandbox = self.local_sandbox().await?;
        let forward = self.inner.topics.clone();
        let sink: ReplySink = Arc::new(move |e: Envelope| {
            if e.op == Op::Publish {
                let _ = forward.send(e);
            }
        });
        sandbox.submit(Envelope::publish(topic, payload), sink);
        Ok(())
    }

    async fn run_local(
        &self,
        id: &str,
        target: &str,
        payload: Payload,
        issued: Instant,
    ) -> Result<(Envelope, f64), StubError> {
        let sandbox = self.local_sandbox().await?;
        let replies = sandbox.execute(Envelope::call(id, target, payload)).await;
        let answer = replies
            .into_iter()
            .find(|e| e.id == id && matches!(e.op, Op::Response | Op::Error))
            .unwrap_or_else(|| {
                Envelope::error(
                    id,
                    target,
                    crate::protocol::codes::WORKLOAD,
                    "local copy gave no answer",
                )
            });
        if answer.error_code() == Some(crate::protocol::codes::TERMINATING) {
            return Err(StubError::Remote {
                code: crate::protocol::codes::TERMINATING.into(),
                detail: "local copy stopped".into(),
            });
        }
        Ok((answer, ms_since(issued)))
    }

    /// Stops the local copy if running. Used on shutdown.
    pub async fn shutdown(&self) {
        self.quiesce().await;
        self.stop_local().await;
    }
}

impl Inner {
    async fn local_sandbox(this: &Arc<Inner>) -> Result<Arc<Sandbox>, StubError> {
        let manifest = this.local_manifest.clone().ok_or(StubError::ServiceDown)?;
        let mut slot = this.local.lock().await;
        if let Some(sb) = slot.as_ref() {
            return Ok(sb.clone());
        }
        let id = format!("{}-local", this.descriptor.service);
        let sb = Arc::new(Sandbox::launch(&id, manifest, this.local_quota).await?);
        *slot = Some(sb.clone());
        Ok(sb)
    }

    async fn stop_local(this: &Arc<Inner>) {
        let taken = this.local.lock().await.take();
        if let Some(sb) = taken {
            sb.stop().await;
        }
    }
}

fn ms_since(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1000.0
}

fn finish(
    request_id: String,
    t_remote: Option<RemoteTime>,
    t_local_ms: Option<f64>,
    winner: Winner,
    answer: Envelope,
    latency_ms: f64,
) -> Result<RequestOutcome, StubError> {
    match (answer.op, answer.payload) {
        (Op::Response, Some(payload)) => Ok(RequestOutcome {
            request_id,
            t_remote,
            t_local_ms,
            winner,
            payload,
            latency_ms,
        }),
        _ => {
            let (code, detail) = answer
                .status
                .map(|s| (s.code, s.detail))
                .unwrap_or_else(|| ("unexpected".into(), format!("{:?}", answer.op)));
            Err(StubError::Remote { code, detail })
        }
    }
}
