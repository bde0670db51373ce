use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::choreographer::{resolve_resources, SlaDictionary};
use crate::manifest::{PackageManifest, ResourceQuota};
use crate::protocol::SlaDeclaration;
use crate::samples;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScenarioError {
    #[error("scenario file: {0}")]
    Syntax(String),
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error("service `{0}` is not deployed")]
    UndeployedService(String),
    #[error("service `{service}` has no rpc `{target}`")]
    UnknownTarget { service: String, target: String },
}

/// Who serves the client's requests.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClientMode {
    /// Cloud service behind the stub, with local restart and failover.
    #[default]
    Stub,
    /// Cloud service only; no local copy.
    Cloud,
    /// Every request runs on the onboard computer.
    Native,
}

impl ClientMode {
    pub fn as_str(self) -> &'static str {
        match self {
            ClientMode::Stub => "stub",
            ClientMode::Cloud => "cloud",
            ClientMode::Native => "native",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServiceUse {
    pub service: String,
    pub t_desire_ms: u32,
    pub t_max_ms: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q_threshold: Option<u32>,
    /// Explicit quota instead of the time-based SLA lookup.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resources: Option<ResourceQuota>,
}

impl ServiceUse {
    pub fn sla(&self) -> SlaDeclaration {
        match self.resources {
            Some(q) => SlaDeclaration::resources(q),
            None => SlaDeclaration::times(self.t_desire_ms, self.t_max_ms),
        }
    }
}

/// Multiplier range applied to local service times, modeling an onboard
/// computer shared with other robot software.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Contention {
    pub min: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LocalExecutor {
    #[serde(default = "default_local_cpu")]
    pub cpu_millicores: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub contention: Option<Contention>,
}

fn default_local_cpu() -> u32 {
    1000
}

impl Default for LocalExecutor {
    fn default() -> Self {
        LocalExecutor {
            cpu_millicores: default_local_cpu(),
            contention: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSegment {
    pub from_request: u64,
    pub to_request: u64,
    pub base_latency_ms: f64,
    pub jitter_ms: f64,
    pub bandwidth_kbps: f64,
    pub up: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkloadSegment {
    pub from_request: u64,
    pub to_request: u64,
    pub target: String,
    pub payload_bytes: u64,
    #[serde(default)]
    pub response_bytes: u64,
    pub period_ms: f64,
}

/// One client driving one service. Request indices start at 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub seed: u64,
    pub request_count: u64,
    #[serde(default)]
    pub mode: ClientMode,
    pub service: ServiceUse,
    #[serde(default)]
    pub local: LocalExecutor,
    pub network_timeline: Vec<NetworkSegment>,
    pub workload_timeline: Vec<WorkloadSegment>,
}

trait Span {
    fn span(&self) -> (u64, u64);
}

impl Span for NetworkSegment {
    fn span(&self) -> (u64, u64) {
        (self.from_request, self.to_request)
    }
}

impl Span for WorkloadSegment {
    fn span(&self) -> (u64, u64) {
        (self.from_request, self.to_request)
    }
}

fn check_cover<T: Span>(what: &str, segs: &[T], n: u64) -> Result<(), ScenarioError> {
    let mut next = 1;
    for (i, s) in segs.iter().enumerate() {
        let (from, to) = s.span();
        if from != next || to < from {
            return Err(ScenarioError::Invalid(format!(
                "{what}[{i}] covers [{from},{to}] but request {next} is next"
            )));
        }
        next = to + 1;
    }
    if next != n + 1 {
        return Err(ScenarioError::Invalid(format!(
            "{what} ends at {} but there are {n} requests",
            next - 1
        )));
    }
    Ok(())
}

fn find<T: Span>(segs: &[T], index: u64) -> &T {
    segs.iter()
        .find(|s| {
            let (a, b) = s.span();
            a <= index && index <= b
        })
        .unwrap_or_else(|| segs.last().expect("validated timelines are non-empty"))
}

impl Scenario {
    pub fn from_json(raw: &[u8]) -> Result<Self, ScenarioError> {
        let sc: Scenario =
            serde_json::from_slice(raw).map_err(|e| ScenarioError::Syntax(e.to_string()))?;
        sc.validate()?;
        Ok(sc)
    }

    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        let raw = std::fs::read(path)
            .map_err(|e| ScenarioError::Syntax(format!("{}: {e}", path.display())))?;
        Self::from_json(&raw)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        if self.request_count == 0 {
            return Err(ScenarioError::Invalid(
                "request_count must be positive".into(),
            ));
        }
        let s = &self.service;
        if s.t_desire_ms == 0 || s.t_desire_ms > s.t_max_ms {
            return Err(ScenarioError::Invalid(
                "need 0 < t_desire_ms <= t_max_ms".into(),
            ));
        }
        if let Some(q) = &s.resources {
            q.validate("service.resources")
                .map_err(|e| ScenarioError::Invalid(e.to_string()))?;
        }
        ResourceQuota::new(self.local.cpu_millicores, 64)
            .validate("local")
            .map_err(|e| ScenarioError::Invalid(e.to_string()))?;
        if let Some(c) = self.local.contention {
            if !(c.min > 0.0 && c.min <= c.max && c.max.is_finite()) {
                return Err(ScenarioError::Invalid(
                    "contention needs 0 < min <= max".into(),
                ));
            }
        }
        check_cover(
            "network_timeline",
            &self.network_timeline,
            self.request_count,
        )?;
        check_cover(
            "workload_timeline",
            &self.workload_timeline,
            self.request_count,
        )?;
        for (i, n) in self.network_timeline.iter().enumerate() {
            let ok = n.base_latency_ms >= 0.0 && n.jitter_ms >= 0.0 && n.bandwidth_kbps > 0.0;
            if !ok || !n.base_latency_ms.is_finite() || !n.jitter_ms.is_finite() {
                return Err(ScenarioError::Invalid(format!(
                    "network_timeline[{i}] needs latency, jitter >= 0 and bandwidth > 0"
                )));
            }
        }
        for (i, w) in self.workload_timeline.iter().enumerate() {
            if !(w.period_ms > 0.0 && w.period_ms.is_finite()) {
                return Err(ScenarioError::Invalid(format!(
                    "workload_timeline[{i}].period_ms must be positive"
                )));
            }
        }
        Ok(())
    }

    pub fn network(&self, index: u64) -> &NetworkSegment {
        find(&self.network_timeline, index)
    }

    pub fn workload(&self, index: u64) -> &WorkloadSegment {
        find(&self.workload_timeline, index)
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }
}

/// What the cloud side has deployed, for virtual-time runs.
#[derive(Debug, Clone, Default)]
pub struct Deployment {
    pub manifests: BTreeMap<String, PackageManifest>,
    pub dictionary: SlaDictionary,
}

impl Deployment {
    /// The sample detector and mapper with an empty dictionary.
    pub fn samples() -> Self {
        let mut d = Deployment::default();
        d.deploy(samples::detector());
        d.deploy(samples::mapper());
        d
    }

    pub fn deploy(&mut self, m: PackageManifest) {
        self.manifests.insert(m.name.clone(), m);
    }

    pub fn manifest(&self, service: &str) -> Result<&PackageManifest, ScenarioError> {
        self.manifests
            .get(service)
            .ok_or_else(|| ScenarioError::UndeployedService(service.to_string()))
    }

    /// Cloud quota the choreographer would grant this scenario's client.
    pub fn cloud_quota(&self, sc: &Scenario) -> Result<ResourceQuota, ScenarioError> {
        let m = self.manifest(&sc.service.service)?;
        Ok(resolve_resources(
            &m.name,
            &sc.service.sla(),
            &self.dictionary,
            m.default_resources,
        ))
    }

    /// Checks that every target in the workload exists.
    pub fn check(&self, sc: &Scenario) -> Result<&PackageManifest, ScenarioError> {
        let m = self.manifest(&sc.service.service)?;
        for w in &sc.workload_timeline {
            if m.interface.rpc(&w.target).is_none() {
                return Err(ScenarioError::UnknownTarget {
                    service: m.name.clone(),
                    target: w.target.clone(),
                });
            }
        }
        Ok(m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::builders;

    #[test]
    fn builders_validate_and_round_trip() {
        for sc in [
            builders::fig8(42),
            builders::sd_native(1),
            builders::sd_cloud(1),
            builders::flat(7, 100),
        ] {
            sc.validate().unwrap();
            let back = Scenario::from_json(sc.to_json().as_bytes()).unwrap();
            assert_eq!(back, sc);
        }
    }

    #[test]
    fn gaps_and_overlaps_rejected() {
        let mut sc = builders::fig8(42);
        sc.network_timeline[1].from_request += 1;
        assert!(matches!(sc.validate(), Err(ScenarioError::Invalid(_))));
        let mut sc = builders::fig8(42);
        sc.network_timeline[1].from_request -= 1;
        assert!(matches!(sc.validate(), Err(ScenarioError::Invalid(_))));
        let mut sc = builders::fig8(42);
        sc.request_count += 1;
        assert!(matches!(sc.validate(), Err(ScenarioError::Invalid(_))));
    }

    #[test]
    fn undeployed_service_and_target() {
        let mut sc = builders::flat(1, 10);
        sc.service.service = "ghost".into();
        assert_eq!(
            Deployment::samples().check(&sc).unwrap_err(),
            ScenarioError::UndeployedService("ghost".into())
        );
        let mut sc = builders::flat(1, 10);
        sc.workload_timeline[0].target = "nope".into();
        assert!(matches!(
            Deployment::samples().check(&sc),
            Err(ScenarioError::UnknownTarget { .. })
        ));
    }

    #[test]
    fn segment_lookup() {
        let sc = builders::fig8(42);
        assert!(sc.network(23).base_latency_ms < sc.network(24).base_latency_ms);
        assert!(sc.network(45).base_latency_ms > sc.network(46).base_latency_ms);
        assert_eq!(sc.network(122), sc.network(111));
    }
}
