//! Cloud-side QoS authority.
//!
//! Turns SLA declarations into resource quotas via a static dictionary,
//! places servants on a fixed pool of nodes, and tracks every servant's
//! lifecycle and the sessions attached to it. All mutation goes through
//! `&mut Choreographer`; the portal wraps it in a mutex so allocate/release
//! is linearizable across sessions.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::manifest::{PackageManifest, ResourceQuota, Scalar};
use crate::protocol::SlaDeclaration;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ChoreographerError {
    #[error("insufficient resources for {cpu_millicores} millicores / {memory_mb} MB")]
    InsufficientResources { cpu_millicores: u32, memory_mb: u32 },
    #[error("unknown service `{0}`")]
    UnknownService(String),
    #[error("unknown servant `{0}`")]
    UnknownServant(String),
    #[error("servant `{id}` cannot move from {from:?} to {to:?}")]
    InvalidTransition {
        id: String,
        from: ServantState,
        to: ServantState,
    },
    #[error("invalid configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SlaEntry {
    pub service: String,
    pub t_desire_ms_max: u32,
    #[serde(default)]
    pub aux: BTreeMap<String, Scalar>,
    pub resources: ResourceQuota,
}

/// The manually curated `<service, SLA, aux, resources>` table.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SlaDictionary {
    entries: Vec<SlaEntry>,
}

impl SlaDictionary {
    pub fn new(entries: Vec<SlaEntry>) -> Result<Self, ChoreographerError> {
        let mut seen = BTreeSet::new();
        for (i, e) in entries.iter().enumerate() {
            if !seen.insert((e.service.as_str(), e.t_desire_ms_max)) {
                return Err(ChoreographerError::Config(format!(
                    "dictionary entry {i} duplicates ({}, {})",
                    e.service, e.t_desire_ms_max
                )));
            }
            e.resources
                .validate(&format!("[{i}].resources"))
                .map_err(|err| ChoreographerError::Config(err.to_string()))?;
        }
        Ok(SlaDictionary { entries })
    }

    pub fn from_json(raw: &[u8]) -> Result<Self, ChoreographerError> {
        let entries: Vec<SlaEntry> =
            serde_json::from_slice(raw).map_err(|e| ChoreographerError::Config(e.to_string()))?;
        Self::new(entries)
    }

    pub fn load(path: &Path) -> Result<Self, ChoreographerError> {
        let raw = std::fs::read(path)
            .map_err(|e| ChoreographerError::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&raw)
    }

    pub fn entries(&self) -> &[SlaEntry] {
        &self.entries
    }

    fn for_service<'a>(&'a self, service: &'a str) -> impl Iterator<Item = &'a SlaEntry> + 'a {
        self.entries.iter().filter(move |e| e.service == service)
    }
}

/// Maps an SLA declaration to the quota a servant will be granted.
///
/// Explicit resources pass through. Otherwise the entry with the smallest
/// `t_desire_ms_max >= t_desire_ms` wins; if no entry is that relaxed, the
/// entry with the largest `t_desire_ms_max` is used; a service with no
/// entries gets `default`.
pub fn resolve_resources(
    service: &str,
    sla: &SlaDeclaration,
    dict: &SlaDictionary,
    default: ResourceQuota,
) -> ResourceQuota {
    if let Some(q) = sla.resources {
        return q;
    }
    let Some(times) = sla.times else {
        return default;
    };
    let want = times.t_desire_ms;
    let best = dict
        .for_service(service)
        .filter(|e| e.t_desire_ms_max >= want)
        .min_by_key(|e| e.t_desire_ms_max);
    best.or_else(|| dict.for_service(service).max_by_key(|e| e.t_desire_ms_max))
        .map(|e| e.resources)
        .unwrap_or(default)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeSpec {
    pub node_id: String,
    pub cpu_millicores_total: u64,
    pub memory_mb_total: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Node {
    pub node_id: String,
    pub cpu_millicores_total: u64,
    pub memory_mb_total: u64,
    pub cpu_millicores_used: u64,
    pub memory_mb_used: u64,
    pub allocated: BTreeMap<String, ResourceQuota>,
}

impl Node {
    pub fn free_cpu(&self) -> u64 {
        self.cpu_millicores_total - self.cpu_millicores_used
    }

    pub fn free_memory(&self) -> u64 {
        self.memory_mb_total - self.memory_mb_used
    }

    fn fits(&self, q: &ResourceQuota) -> bool {
        self.free_cpu() >= q.cpu_millicores as u64 && self.free_memory() >= q.memory_mb as u64
    }
}

/// The modeled cluster. Nodes are kept sorted by id.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct NodePool {
    nodes: Vec<Node>,
}

impl NodePool {
    pub fn new(specs: Vec<NodeSpec>) -> Result<Self, ChoreographerError> {
        let mut ids = BTreeSet::new();
        let mut nodes = Vec::with_capacity(specs.len());
        for s in specs {
            if s.node_id.is_empty() || !ids.insert(s.node_id.clone()) {
                return Err(ChoreographerError::Config(format!(
                    "node id `{}` is empty or duplicated",
                    s.node_id
                )));
            }
            nodes.push(Node {
                node_id: s.node_id,
                cpu_millicores_total: s.cpu_millicores_total,
                memory_mb_total: s.memory_mb_total,
                cpu_millicores_used: 0,
                memory_mb_used: 0,
                allocated: BTreeMap::new(),
            });
        }
        nodes.sort_by(|a, b| a.node_id.cmp(&b.node_id));
        Ok(NodePool { nodes })
    }

    /// `count` identical nodes named `node-0`, `node-1`, ...
    pub fn uniform(count: usize, cpu_millicores: u64, memory_mb: u64) -> Self {
        let specs = (0..count)
            .map(|i| NodeSpec {
                node_id: format!("node-{i}"),
                cpu_millicores_total: cpu_millicores,
                memory_mb_total: memory_mb,
            })
            .collect();
        Self::new(specs).expect("generated ids are unique")
    }

    pub fn from_json(raw: &[u8]) -> Result<Self, ChoreographerError> {
        let specs: Vec<NodeSpec> =
            serde_json::from_slice(raw).map_err(|e| ChoreographerError::Config(e.to_string()))?;
        Self::new(specs)
    }

    pub fn load(path: &Path) -> Result<Self, ChoreographerError> {
        let raw = std::fs::read(path)
            .map_err(|e| ChoreographerError::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&raw)
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn node(&self, node_id: &str) -> Option<&Node> {
        self.nodes.iter().find(|n| n.node_id == node_id)
    }

    /// Best fit on memory, ties broken by smallest node id. The allocation is
    /// recorded before returning; on failure nothing changes.
    pub fn schedule(
        &mut self,
        servant_id: &str,
        quota: ResourceQuota,
    ) -> Result<String, ChoreographerError> {
        let chosen = self
            .nodes
            .iter_mut()
            .filter(|n| n.fits(&quota))
            .min_by(|a, b| {
                let left_a = a.free_memory() - quota.memory_mb as u64;
                let left_b = b.free_memory() - quota.memory_mb as u64;
                left_a.cmp(&left_b).then_with(|| a.node_id.cmp(&b.node_id))
            })
            .ok_or(ChoreographerError::InsufficientResources {
                cpu_millicores: quota.cpu_millicores,
                memory_mb: quota.memory_mb,
            })?;
        chosen.cpu_millicores_used += quota.cpu_millicores as u64;
        chosen.memory_mb_used += quota.memory_mb as u64;
        chosen.allocated.insert(servant_id.to_string(), quota);
        Ok(chosen.node_id.clone())
    }

    /// Returns the servant's quota to its node.
    pub fn release(&mut self, node_id: &str, servant_id: &str) -> Option<ResourceQuota> {
        let node = self.nodes.iter_mut().find(|n| n.node_id == node_id)?;
        let q = node.allocated.remove(servant_id)?;
        node.cpu_millicores_used -= q.cpu_millicores as u64;
        node.memory_mb_used -= q.memory_mb as u64;
        Some(q)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ServantState {
    Instantiating,
    Running,
    Terminating,
    Terminated,
}

impl ServantState {
    pub fn can_become(self, next: ServantState) -> bool {
        use ServantState::*;
        matches!(
            (self, next),
            (Instantiating, Running)
                | (Instantiating, Terminating)
                | (Running, Terminating)
                | (Terminating, Terminated)
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ServantRecord {
    pub servant_id: String,
    pub service: String,
    /// Owning session for exclusive servants, empty for shared ones.
    pub owner_session: String,
    pub quota: ResourceQuota,
    pub node_id: String,
    pub state: ServantState,
    /// Sessions currently routed to this servant.
    pub sessions: BTreeSet<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct ServiceProfile {
    stateful: bool,
    default_resources: ResourceQuota,
}

/// Outcome of [`Choreographer::instantiate_servant`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Grant {
    pub record: ServantRecord,
    /// False when an existing shared servant was reused.
    pub created: bool,
}

#[derive(Debug, Clone)]
pub struct Choreographer {
    dictionary: SlaDictionary,
    pool: NodePool,
    services: BTreeMap<String, ServiceProfile>,
    servants: BTreeMap<String, ServantRecord>,
    next_id: u64,
}

impl Choreographer {
    pub fn new(dictionary: SlaDictionary, pool: NodePool) -> Self {
        Choreographer {
            dictionary,
            pool,
            services: BTreeMap::new(),
            servants: BTreeMap::new(),
            next_id: 1,
        }
    }

    pub fn dictionary(&self) -> &SlaDictionary {
        &self.dictionary
    }

    pub fn pool(&self) -> &NodePool {
        &self.pool
    }

    /// Makes a deployed package instantiable.
    pub fn register_service(&mut self, manifest: &PackageManifest) {
        self.services.insert(
            manifest.name.clone(),
            ServiceProfile {
                stateful: manifest.stateful,
                default_resources: manifest.default_resources,
            },
        );
    }

    pub fn is_registered(&self, service: &str) -> bool {
        self.services.contains_key(service)
    }

    pub fn resolve(
        &self,
        service: &str,
        sla: &SlaDeclaration,
    ) -> Result<ResourceQuota, ChoreographerError> {
        let profile = self
            .services
            .get(service)
            .ok_or_else(|| ChoreographerError::UnknownService(service.to_string()))?;
        Ok(resolve_resources(
            service,
            sla,
            &self.dictionary,
            profile.default_resources,
        ))
    }

    /// Grants `session` a servant for `service`.
    ///
    /// Stateful services always get a fresh exclusive servant. Stateless
    /// services reuse the smallest running shared servant whose quota covers
    /// the resolved quota, and otherwise get a new shared servant.
    pub fn instantiate_servant(
        &mut self,
        service: &str,
        session: &str,
        sla: &SlaDeclaration,
    ) -> Result<Grant, ChoreographerError> {
        let profile = *self
            .services
            .get(service)
            .ok_or_else(|| ChoreographerError::UnknownService(service.to_string()))?;
        let quota = resolve_resources(service, sla, &self.dictionary, profile.default_resources);

        if !profile.stateful {
            let reusable = self
                .servants
                .values()
                .filter(|r| {
                    r.service == service
                        && r.owner_session.is_empty()
                        && r.state == ServantState::Running
                        && r.quota.covers(&quota)
                })
                .min_by(|a, b| {
                    (a.quota.memory_mb, a.quota.cpu_millicores, &a.servant_id).cmp(&(
                        b.quota.memory_mb,
                        b.quota.cpu_millicores,
                        &b.servant_id,
                    ))
                })
                .map(|r| r.servant_id.clone());
            if let Some(id) = reusable {
                let record = self.servants.get_mut(&id).expect("id came from the map");
                record.sessions.insert(session.to_string());
                return Ok(Grant {
                    record: record.clone(),
                    created: false,
                });
            }
        }

        let servant_id = format!("{service}-{:04}", self.next_id);
        let node_id = self.pool.schedule(&servant_id, quota)?;
        self.next_id += 1;
        let record = ServantRecord {
            servant_id: servant_id.clone(),
            service: service.to_string(),
            owner_session: if profile.stateful {
                session.to_string()
            } else {
                String::new()
            },
            quota,
            node_id,
            state: ServantState::Instantiating,
            sessions: BTreeSet::from([session.to_string()]),
        };
        self.servants.insert(servant_id, record.clone());
        Ok(Grant {
            record,
            created: true,
        })
    }

    /// Called once the sandbox acknowledged start.
    pub fn mark_running(&mut self, servant_id: &str) -> Result<(), ChoreographerError> {
        self.transition(servant_id, ServantState::Running)
    }

    fn transition(&mut self, servant_id: &str, to: ServantState) -> Result<(), ChoreographerError> {
        let r = self
            .servants
            .get_mut(servant_id)
            .ok_or_else(|| ChoreographerError::UnknownServant(servant_id.to_string()))?;
        if !r.state.can_become(to) {
            return Err(ChoreographerError::InvalidTransition {
                id: servant_id.to_string(),
                from: r.state,
                to,
            });
        }
        r.state = to;
        Ok(())
    }

    /// Terminates a servant regardless of attached sessions and returns its
    /// final record. Quota goes back to the node immediately.
    pub fn release_servant(
        &mut self,
        servant_id: &str,
    ) -> Result<ServantRecord, ChoreographerError> {
        self.transition(servant_id, ServantState::Terminating)?;
        self.transition(servant_id, ServantState::Terminated)?;
        let record = self
            .servants
            .remove(servant_id)
            .expect("transition succeeded so the record exists");
        self.pool.release(&record.node_id, servant_id);
        Ok(record)
    }

    /// Detaches `session` from a servant. Returns the released record when
    /// this was the owner of an exclusive servant or the last session on a
    /// shared one.
    pub fn detach(
        &mut self,
        servant_id: &str,
        session: &str,
    ) -> Result<Option<ServantRecord>, ChoreographerError> {
        let r = self
            .servants
            .get_mut(servant_id)
            .ok_or_else(|| ChoreographerError::UnknownServant(servant_id.to_string()))?;
        r.sessions.remove(session);
        let last = r.sessions.is_empty() || r.owner_session == session;
        if last {
            self.release_servant(servant_id).map(Some)
        } else {
            Ok(None)
        }
    }

    /// Detaches a closing session from everything it uses.
    pub fn session_closed(&mut self, session: &str) -> Vec<ServantRecord> {
        let ids: Vec<String> = self
            .servants
            .values()
            .filter(|r| r.sessions.contains(session))
            .map(|r| r.servant_id.clone())
            .collect();
        ids.iter()
            .filter_map(|id| self.detach(id, session).ok().flatten())
            .collect()
    }

    pub fn servant(&self, servant_id: &str) -> Option<&ServantRecord> {
        self.servants.get(servant_id)
    }

    pub fn servants(&self) -> impl Iterator<Item = &ServantRecord> {
        self.servants.values()
    }

    pub fn servant_count(&self) -> usize {
        self.servants.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::samples;

    fn detect_dict() -> SlaDictionary {
        SlaDictionary::new(vec![
            SlaEntry {
                service: "detect".into(),
                t_desire_ms_max: 100,
                aux: BTreeMap::new(),
                resources: ResourceQuota::new(4000, 1024),
            },
            SlaEntry {
                service: "detect".into(),
                t_desire_ms_max: 500,
                aux: BTreeMap::new(),
                resources: ResourceQuota::new(1000, 256),
            },
        ])
        .unwrap()
    }

    const DEFAULT: ResourceQuota = ResourceQuota::new(500, 64);

    #[test]
    fn explicit_resources_pass_through() {
        let sla = SlaDeclaration::resources(ResourceQuota::new(2000, 512));
        assert_eq!(
            resolve_resources("detect", &sla, &detect_dict(), DEFAULT),
            ResourceQuota::new(2000, 512)
        );
    }

    #[test]
    fn smallest_qualifying_entry() {
        let d = detect_dict();
        let r = |t| resolve_resources("detect", &SlaDeclaration::times(t, 1000), &d, DEFAULT);
        assert_eq!(r(80), ResourceQuota::new(4000, 1024));
        assert_eq!(r(100), ResourceQuota::new(4000, 1024));
        assert_eq!(r(101), ResourceQuota::new(1000, 256));
        assert_eq!(r(50), ResourceQuota::new(4000, 1024));
    }

    #[test]
    fn largest_entry_when_none_qualifies() {
        // Nothing is as relaxed as 900 ms; fall back to the 500 ms row.
        let d = detect_dict();
        let q = resolve_resources("detect", &SlaDeclaration::times(900, 1000), &d, DEFAULT);
        assert_eq!(q, ResourceQuota::new(1000, 256));
    }

    #[test]
    fn default_without_entries() {
        let q = resolve_resources(
            "mapper",
            &SlaDeclaration::times(10, 20),
            &detect_dict(),
            DEFAULT,
        );
        assert_eq!(q, DEFAULT);
    }

    #[test]
    fn duplicate_dictionary_rows_rejected() {
        let mut entries = detect_dict().entries().to_vec();
        entries.push(entries[0].clone());
        assert!(SlaDictionary::new(entries).is_err());
    }

    #[test]
    fn dictionary_file_format() {
        let raw = br#"[{"service":"detect","t_desire_ms_max":100,"aux":{"gpu":false},"resources":{"cpu_millicores":4000,"memory_mb":1024}},
                      {"service":"detect","t_desire_ms_max":500,"resources":{"cpu_millicores":1000,"memory_mb":256}}]"#;
        let d = SlaDictionary::from_json(raw).unwrap();
        assert_eq!(d.entries().len(), 2);
        assert_eq!(d.entries()[0].aux["gpu"], Scalar::Bool(false));
    }

    #[test]
    fn tie_break_smallest_node_id() {
        let mut pool = NodePool::uniform(2, 4000, 4096);
        assert_eq!(
            pool.schedule("a", ResourceQuota::new(1000, 256)).unwrap(),
            "node-0"
        );
    }

    #[test]
    fn best_fit_on_memory() {
        let mut pool = NodePool::new(vec![
            NodeSpec {
                node_id: "a".into(),
                cpu_millicores_total: 8000,
                memory_mb_total: 8192,
            },
            NodeSpec {
                node_id: "b".into(),
                cpu_millicores_total: 8000,
                memory_mb_total: 1024,
            },
        ])
        .unwrap();
        assert_eq!(
            pool.schedule("x", ResourceQuota::new(1000, 512)).unwrap(),
            "b"
        );
        assert_eq!(
            pool.schedule("y", ResourceQuota::new(1000, 768)).unwrap(),
            "a"
        );
    }

    #[test]
    fn oversized_quota_rejected_without_side_effects() {
        let mut pool = NodePool::uniform(2, 4000, 4096);
        let before = pool.clone();
        let err = pool
            .schedule("big", ResourceQuota::new(8000, 128))
            .unwrap_err();
        assert!(matches!(
            err,
            ChoreographerError::InsufficientResources { .. }
        ));
        assert_eq!(pool, before);
    }

    #[test]
    fn exact_fill_then_reject() {
        let mut pool = NodePool::uniform(2, 2000, 1024);
        for i in 0..4 {
            pool.schedule(&format!("s{i}"), ResourceQuota::new(1000, 512))
                .unwrap();
        }
        for n in pool.nodes() {
            assert_eq!((n.free_cpu(), n.free_memory()), (0, 0));
        }
        assert!(pool.schedule("s4", ResourceQuota::new(100, 16)).is_err());
    }

    fn choreo() -> Choreographer {
        let mut c = Choreographer::new(detect_dict(), NodePool::uniform(2, 8000, 8192));
        c.register_service(&samples::detector());
        c.register_service(&samples::mapper());
        c
    }

    fn grant_running(
        c: &mut Choreographer,
        service: &str,
        session: &str,
        sla: &SlaDeclaration,
    ) -> Grant {
        let g = c.instantiate_servant(service, session, sla).unwrap();
        if g.created {
            c.mark_running(&g.record.servant_id).unwrap();
        }
        g
    }

    #[test]
    fn stateful_servants_are_exclusive() {
        let mut c = choreo();
        let sla = SlaDeclaration::times(100, 300);
        let a = grant_running(&mut c, "mapper", "A", &sla);
        let b = grant_running(&mut c, "mapper", "B", &sla);
        assert_ne!(a.record.servant_id, b.record.servant_id);
        assert_eq!(a.record.owner_session, "A");
        assert_eq!(b.record.owner_session, "B");
    }

    #[test]
    fn stateless_servants_are_shared() {
        let mut c = choreo();
        let sla = SlaDeclaration::times(100, 300);
        let a = grant_running(&mut c, "detect", "A", &sla);
        let b = grant_running(&mut c, "detect", "B", &sla);
        assert!(a.created && !b.created);
        assert_eq!(a.record.servant_id, b.record.servant_id);
        assert!(a.record.owner_session.is_empty());
    }

    #[test]
    fn larger_sla_gets_new_shared_servant() {
        let mut c = choreo();
        let small = grant_running(&mut c, "detect", "A", &SlaDeclaration::times(400, 900));
        let big = grant_running(&mut c, "detect", "B", &SlaDeclaration::times(80, 900));
        assert_ne!(small.record.servant_id, big.record.servant_id);
        assert_eq!(big.record.quota, ResourceQuota::new(4000, 1024));
        // A relaxed newcomer reuses the smallest adequate servant.
        let c3 = grant_running(&mut c, "detect", "C", &SlaDeclaration::times(400, 900));
        assert_eq!(c3.record.servant_id, small.record.servant_id);
    }

    #[test]
    fn instantiating_servant_is_not_shared() {
        let mut c = choreo();
        let sla = SlaDeclaration::times(100, 300);
        let a = c.instantiate_servant("detect", "A", &sla).unwrap();
        let b = c.instantiate_servant("detect", "B", &sla).unwrap();
        assert_ne!(a.record.servant_id, b.record.servant_id);
    }

    #[test]
    fn unknown_service() {
        let mut c = choreo();
        assert_eq!(
            c.instantiate_servant("nope", "A", &SlaDeclaration::times(1, 2)),
            Err(ChoreographerError::UnknownService("nope".into()))
        );
    }

    #[test]
    fn owner_close_restores_capacity() {
        let mut c = choreo();
        let before = c.pool().clone();
        grant_running(&mut c, "mapper", "A", &SlaDeclaration::times(100, 300));
        assert_ne!(c.pool(), &before);
        let released = c.session_closed("A");
        assert_eq!(released.len(), 1);
        assert_eq!(released[0].state, ServantState::Terminated);
        assert_eq!(c.pool(), &before);
        assert_eq!(c.servant_count(), 0);
    }

    #[test]
    fn shared_servant_survives_one_close() {
        let mut c = choreo();
        let sla = SlaDeclaration::times(100, 300);
        let a = grant_running(&mut c, "detect", "A", &sla);
        grant_running(&mut c, "detect", "B", &sla);
        assert!(c.session_closed("A").is_empty());
        let r = c.servant(&a.record.servant_id).unwrap();
        assert_eq!(r.state, ServantState::Running);
        assert_eq!(c.session_closed("B").len(), 1);
        assert_eq!(c.servant_count(), 0);
    }

    #[test]
    fn double_release() {
        let mut c = choreo();
        let g = grant_running(&mut c, "detect", "A", &SlaDeclaration::times(100, 300));
        c.release_servant(&g.record.servant_id).unwrap();
        assert_eq!(
            c.release_servant(&g.record.servant_id),
            Err(ChoreographerError::UnknownServant(
                g.record.servant_id.clone()
            ))
        );
    }

    #[test]
    fn lifecycle_order_enforced() {
        use ServantState::*;
        assert!(Instantiating.can_become(Running));
        assert!(Running.can_become(Terminating));
        assert!(Terminating.can_become(Terminated));
        assert!(!Running.can_become(Instantiating));
        assert!(!Terminated.can_become(Running));
        assert!(!Instantiating.can_become(Terminated));
        let mut c = choreo();
        let g = grant_running(&mut c, "detect", "A", &SlaDeclaration::times(100, 300));
        assert!(matches!(
            c.mark_running(&g.record.servant_id),
            Err(ChoreographerError::InvalidTransition { .. })
        ));
    }
}
