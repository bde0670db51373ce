//! Virtual-time execution of a scenario.
//!
//! Mirrors the async stub request by request: the same [`StubPolicy`]
//! decides routing, remote legs time out at `2 * t_max`, a timed-out
//! request without a racing local copy is rescued locally, and failover is
//! driven by the keepalive detector. The cloud servant and the local copy
//! are single FIFO workers whose service times come from the workload model.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::metrics::RequestRow;
use super::network::inject_network;
use super::scenario::{ClientMode, Deployment, Scenario, ScenarioError};
use crate::manifest::{PackageManifest, ResourceQuota, WorkloadKind};
use crate::protocol::KEEPALIVE_INTERVAL_MS;
use crate::servant::BuiltinWorkloadModel;
use crate::stub::{
    Action, FailoverAction, KeepaliveDetector, Plan, RemoteTime, SatisfactionState, StubPolicy,
    Winner,
};
use crate::stubgen::DEFAULT_Q_THRESHOLD;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Ev {
    Issue(u64),
    Tick,
    ArriveCloud(u64),
    CloudDone(u64),
    RemoteResponse(u64),
    Timeout(u64),
    LocalDone(u64, u64),
}

#[derive(Debug)]
struct Scheduled {
    at: f64,
    seq: u64,
    ev: Ev,
}

impl PartialEq for Scheduled {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Scheduled {}
impl PartialOrd for Scheduled {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Scheduled {
    // Reversed so the max-heap pops the earliest event first.
    fn cmp(&self, other: &Self) -> Ordering {
        other.at.total_cmp(&self.at).then(other.seq.cmp(&self.seq))
    }
}

#[derive(Debug, Clone, Default)]
struct Req {
    issued: f64,
    bytes: u64,
    response_bytes: u64,
    remote_sent: bool,
    settled: Option<RemoteTime>,
    /// Local job in flight for this request.
    local_job: bool,
    /// The local copy failed this request; no rescue.
    local_failed: bool,
    done: bool,
    winner: Option<Winner>,
    serving_ms: Option<f64>,
    t_local_ms: Option<f64>,
    q_after: Option<f64>,
    action: Option<Action>,
}

struct Executor {
    model: BuiltinWorkloadModel,
    quota: ResourceQuota,
    stateful: bool,
    free_at: f64,
    frames: u64,
}

impl Executor {
    fn new(m: &PackageManifest, quota: ResourceQuota) -> Result<Self, ScenarioError> {
        let model = BuiltinWorkloadModel::from_spec(&m.workload).ok_or_else(|| {
            ScenarioError::Invalid(format!(
                "`{}` is not a builtin workload; virtual time needs a model",
                m.name
            ))
        })?;
        Ok(Executor {
            model,
            quota,
            stateful: m.workload.kind == WorkloadKind::BuiltinStateful,
            free_at: 0.0,
            frames: 0,
        })
    }

    /// Queues one job and returns its completion time.
    fn run(&mut self, now: f64, bytes: u64, multiplier: f64) -> f64 {
        let start = now.max(self.free_at);
        let service =
            self.model
                .service_time_ms(bytes as usize, self.quota.cpu_millicores, self.frames)
                * multiplier;
        if self.stateful {
            self.frames += 1;
        }
        self.free_at = start + service;
        self.free_at
    }
}

struct Sim<'a> {
    sc: &'a Scenario,
    rng: ChaCha8Rng,
    heap: BinaryHeap<Scheduled>,
    seq: u64,
    reqs: Vec<Req>,
    issued: u64,
    finished: u64,
    policy: StubPolicy,
    keepalive: KeepaliveDetector,
    cloud: Executor,
    local: Executor,
    local_gen: u64,
    timeout_ms: f64,
}

/// Runs `sc` in virtual time. Identical inputs give identical rows.
pub fn simulate(sc: &Scenario, deployment: &Deployment) -> Result<Vec<RequestRow>, ScenarioError> {
    sc.validate()?;
    let manifest = deployment.check(sc)?;
    let cloud_quota = deployment.cloud_quota(sc)?;
    let local_quota = ResourceQuota::new(
        sc.local.cpu_millicores,
        manifest.default_resources.memory_mb,
    );
    let sat = SatisfactionState::new(
        sc.service.q_threshold.unwrap_or(DEFAULT_Q_THRESHOLD),
        sc.service.t_desire_ms,
        sc.service.t_max_ms,
    );
    let timeout_ms = sat.timeout_ms();
    let has_fallback = sc.mode == ClientMode::Stub;
    let mut sim = Sim {
        sc,
        rng: ChaCha8Rng::seed_from_u64(sc.seed),
        heap: BinaryHeap::new(),
        seq: 0,
        reqs: vec![Req::default(); sc.request_count as usize + 1],
        issued: 0,
        finished: 0,
        policy: StubPolicy::new(sat, manifest.stateful, has_fallback),
        keepalive: KeepaliveDetector::default(),
        cloud: Executor::new(manifest, cloud_quota)?,
        local: Executor::new(manifest, local_quota)?,
        local_gen: 0,
        timeout_ms,
    };
    sim.push(0.0, Ev::Issue(1));
    if sc.mode != ClientMode::Native {
        sim.push(0.0, Ev::Tick);
    }
    while let Some(Scheduled { at, ev, .. }) = sim.heap.pop() {
        sim.step(at, ev);
    }
    Ok(sim.rows())
}

impl<'a> Sim<'a> {
    fn push(&mut self, at: f64, ev: Ev) {
        self.heap.push(Scheduled {
            at,
            seq: self.seq,
            ev,
        });
        self.seq += 1;
    }

    fn all_done(&self) -> bool {
        self.finished == self.sc.request_count
            && self.reqs[1..]
                .iter()
                .all(|r| !r.remote_sent || r.settled.is_some())
    }

    /// Segment governing traffic right now: the latest issued request's.
    fn current_segment(&self) -> &'a crate::harness::scenario::NetworkSegment {
        self.sc.network(self.issued.max(1))
    }

    fn step(&mut self, now: f64, ev: Ev) {
        match ev {
            Ev::Issue(i) => self.issue(now, i),
            Ev::Tick => {
                self.keepalive.tick();
                if self.current_segment().up {
                    self.keepalive.pong();
                }
                if !self.all_done() {
                    self.push(now + KEEPALIVE_INTERVAL_MS as f64, Ev::Tick);
                }
            }
            Ev::ArriveCloud(i) => {
                let bytes = self.reqs[i as usize].bytes;
                let done = self.cloud.run(now, bytes, 1.0);
                self.push(done, Ev::CloudDone(i));
            }
            Ev::CloudDone(i) => {
                let seg = self.current_segment();
                let bytes = self.reqs[i as usize].response_bytes;
                if let Some(d) = inject_network(seg, bytes, &mut self.rng) {
                    self.push(now + d, Ev::RemoteResponse(i));
                }
            }
            Ev::RemoteResponse(i) => {
                let r = &self.reqs[i as usize];
                if r.settled.is_none() {
                    let t = RemoteTime::Completed(now - r.issued);
                    self.settle(now, i, t);
                    self.deliver(now, i, Winner::Remote);
                }
            }
            Ev::Timeout(i) => {
                if self.reqs[i as usize].settled.is_none() {
                    self.settle(now, i, RemoteTime::TimedOut);
                    let r = &self.reqs[i as usize];
                    if !r.done && !r.local_job {
                        if self.policy.has_fallback() && !r.local_failed {
                            self.start_local(now, i);
                        } else {
                            self.fail(i);
                        }
                    }
                }
            }
            Ev::LocalDone(i, generation) => {
                if generation != self.local_gen {
                    return;
                }
                self.reqs[i as usize].local_job = false;
                if !self.reqs[i as usize].done {
                    self.deliver(now, i, Winner::Local);
                }
            }
        }
    }

    fn issue(&mut self, now: f64, i: u64) {
        self.issued = i;
        let w = self.sc.workload(i);
        {
            let r = &mut self.reqs[i as usize];
            r.issued = now;
            r.bytes = w.payload_bytes;
            r.response_bytes = w.response_bytes;
        }
        if i < self.sc.request_count {
            self.push(now + w.period_ms, Ev::Issue(i + 1));
        }

        let plan = if self.sc.mode == ClientMode::Native {
            Plan {
                remote: false,
                local: true,
            }
        } else {
            match self.policy.on_link(self.keepalive.status()) {
                FailoverAction::Resume {
                    regrant,
                    stop_local,
                } => {
                    if regrant {
                        self.cloud.frames = 0;
                    }
                    if stop_local {
                        self.stop_local(now);
                    }
                }
                FailoverAction::EnterFailover => self.reset_local(),
                FailoverAction::None | FailoverAction::Unavailable => {}
            }
            self.policy.plan()
        };

        if plan.remote {
            self.reqs[i as usize].remote_sent = true;
            let seg = self.sc.network(i);
            if let Some(d) = inject_network(seg, w.payload_bytes, &mut self.rng) {
                self.push(now + d, Ev::ArriveCloud(i));
            }
            self.push(now + self.timeout_ms, Ev::Timeout(i));
        }
        if plan.local {
            self.start_local(now, i);
        }
        if !plan.remote && !plan.local {
            self.fail(i);
        }
    }

    fn start_local(&mut self, now: f64, i: u64) {
        let mult = match self.sc.local.contention {
            Some(c) if c.max > c.min => self.rng.random_range(c.min..=c.max),
            Some(c) => c.min,
            None => 1.0,
        };
        let bytes = self.reqs[i as usize].bytes;
        let done = self.local.run(now, bytes, mult);
        self.reqs[i as usize].local_job = true;
        self.push(done, Ev::LocalDone(i, self.local_gen));
    }

    /// A fresh local copy: empty state, idle worker.
    fn reset_local(&mut self) {
        self.local.frames = 0;
    }

    /// Stopping the local copy answers in-flight jobs with an error.
    fn stop_local(&mut self, now: f64) {
        self.local_gen += 1;
        self.local.free_at = now;
        self.reset_local();
        for i in 1..=self.issued {
            let r = &mut self.reqs[i as usize];
            if r.local_job {
                r.local_job = false;
                r.local_failed = true;
                if !r.done && r.settled == Some(RemoteTime::TimedOut) {
                    self.fail(i);
                }
            }
        }
    }

    fn settle(&mut self, now: f64, i: u64, t: RemoteTime) {
        let action = self.policy.on_remote_settled(t);
        {
            let r = &mut self.reqs[i as usize];
            r.settled = Some(t);
            r.q_after = Some(self.policy.satisfaction().q);
            r.action = Some(action);
        }
        match action {
            Action::StartLocal => self.reset_local(),
            Action::StopLocal => self.stop_local(now),
            Action::None => {}
        }
    }

    fn deliver(&mut self, now: f64, i: u64, winner: Winner) {
        let r = &mut self.reqs[i as usize];
        r.done = true;
        r.winner = Some(winner);
        r.serving_ms = Some(now - r.issued);
        if winner == Winner::Local {
            r.t_local_ms = r.serving_ms;
        }
        self.finished += 1;
    }

    fn fail(&mut self, i: u64) {
        let r = &mut self.reqs[i as usize];
        if !r.done {
            r.done = true;
            self.finished += 1;
        }
    }

    fn rows(&self) -> Vec<RequestRow> {
        (1..=self.sc.request_count)
            .map(|i| {
                let r = &self.reqs[i as usize];
                RequestRow {
                    index: i,
                    t_remote: r.settled,
                    t_local_ms: r.t_local_ms,
                    winner: r.winner,
                    serving_ms: r.serving_ms,
                    q_after: r.q_after,
                    action: r.action.unwrap_or(Action::None),
                }
            })
            .collect()
    }
}
