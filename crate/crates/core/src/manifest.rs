//! Package manifests: the declarative description of a wrappable package.
//!
//! A manifest names the package's topics and RPCs, says whether the package
//! keeps per-client state, describes how to run its workload, and carries the
//! resource quota used when a client asks for no particular SLA.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::canonical;
use crate::schema::SchemaRef;

pub const PARAM_BASE_WORK: &str = "base_work_millicore_ms";
pub const PARAM_PER_KB_WORK: &str = "per_kb_work_millicore_ms";
pub const PARAM_STATE_GROWTH: &str = "state_growth_ms";
pub const PARAM_COMMAND: &str = "command";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ManifestError {
    #[error("syntax error: {0}")]
    Syntax(String),
    #[error("validation error at `{path}`: {reason}")]
    Validation { path: String, reason: String },
}

impl ManifestError {
    fn at(path: impl Into<String>, reason: impl Into<String>) -> Self {
        ManifestError::Validation {
            path: path.into(),
            reason: reason.into(),
        }
    }

    /// Field path of a validation error.
    pub fn path(&self) -> Option<&str> {
        match self {
            ManifestError::Validation { path, .. } => Some(path),
            ManifestError::Syntax(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PackageManifest {
    pub name: String,
    pub version: String,
    pub stateful: bool,
    pub interface: InterfaceSpec,
    pub workload: WorkloadSpec,
    pub default_resources: ResourceQuota,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct InterfaceSpec {
    #[serde(default)]
    pub topics: Vec<TopicSpec>,
    #[serde(default)]
    pub rpcs: Vec<RpcSpec>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Inbound,
    Outbound,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopicSpec {
    pub name: String,
    pub direction: Direction,
    pub schema: SchemaRef,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RpcSpec {
    pub name: String,
    pub request_schema: SchemaRef,
    pub response_schema: SchemaRef,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WorkloadKind {
    BuiltinStateless,
    BuiltinStateful,
    ExternalProcess,
}

/// A workload parameter value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Scalar {
    Bool(bool),
    Int(i64),
    Float(f64),
    Str(String),
}

impl Scalar {
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Scalar::Int(i) => Some(*i as f64),
            Scalar::Float(f) => Some(*f),
            _ => None,
        }
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            Scalar::Str(s) => Some(s),
            _ => None,
        }
    }
}

impl fmt::Display for Scalar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Scalar::Bool(b) => write!(f, "{b}"),
            Scalar::Int(i) => write!(f, "{i}"),
            Scalar::Float(x) => write!(f, "{x}"),
            Scalar::Str(s) => f.write_str(s),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkloadSpec {
    pub kind: WorkloadKind,
    #[serde(default)]
    pub params: BTreeMap<String, Scalar>,
}

impl WorkloadSpec {
    pub fn param_f64(&self, key: &str) -> Option<f64> {
        self.params.get(key).and_then(Scalar::as_f64)
    }

    pub fn is_builtin(&self) -> bool {
        !matches!(self.kind, WorkloadKind::ExternalProcess)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResourceQuota {
    pub cpu_millicores: u32,
    pub memory_mb: u32,
}

impl ResourceQuota {
    pub const MIN_CPU: u32 = 100;
    pub const MAX_CPU: u32 = 64_000;
    pub const MIN_MEMORY: u32 = 16;
    pub const MAX_MEMORY: u32 = 262_144;

    pub const fn new(cpu_millicores: u32, memory_mb: u32) -> Self {
        ResourceQuota {
            cpu_millicores,
            memory_mb,
        }
    }

    /// Checks the quota bounds, reporting failures under `path`.
    pub fn validate(&self, path: &str) -> Result<(), ManifestError> {
        if !(Self::MIN_CPU..=Self::MAX_CPU).contains(&self.cpu_millicores) {
            return Err(ManifestError::at(
                format!("{path}.cpu_millicores"),
                format!(
                    "{} outside [{}, {}]",
                    self.cpu_millicores,
                    Self::MIN_CPU,
                    Self::MAX_CPU
                ),
            ));
        }
        if !(Self::MIN_MEMORY..=Self::MAX_MEMORY).contains(&self.memory_mb) {
            return Err(ManifestError::at(
                format!("{path}.memory_mb"),
                format!(
                    "{} outside [{}, {}]",
                    self.memory_mb,
                    Self::MIN_MEMORY,
                    Self::MAX_MEMORY
                ),
            ));
        }
        Ok(())
    }

    /// True when `self` is at least `other` on both dimensions.
    pub fn covers(&self, other: &ResourceQuota) -> bool {
        self.cpu_millicores >= other.cpu_millicores && self.memory_mb >= other.memory_mb
    }
}

impl InterfaceSpec {
    pub fn rpc(&self, name: &str) -> Option<&RpcSpec> {
        self.rpcs.iter().find(|r| r.name == name)
    }

    pub fn topic(&self, name: &str) -> Option<&TopicSpec> {
        self.topics.iter().find(|t| t.name == name)
    }

    pub fn outbound_topics(&self) -> impl Iterator<Item = &TopicSpec> {
        self.topics
            .iter()
            .filter(|t| t.direction == Direction::Outbound)
    }

    /// Every schema mentioned anywhere in the interface.
    pub fn schemas(&self) -> std::collections::BTreeSet<SchemaRef> {
        let mut out = std::collections::BTreeSet::new();
        out.extend(self.topics.iter().map(|t| t.schema));
        for r in &self.rpcs {
            out.insert(r.request_schema);
            out.insert(r.response_schema);
        }
        out
    }
}

/// Parses and validates manifest JSON.
pub fn parse_manifest(raw: &[u8]) -> Result<PackageManifest, ManifestError> {
    let text = std::str::from_utf8(raw).map_err(|e| ManifestError::Syntax(e.to_string()))?;
    let tree: serde_json::Value =
        serde_json::from_str(text).map_err(|e| ManifestError::Syntax(e.to_string()))?;
    let manifest: PackageManifest = serde_path_to_error::deserialize(tree).map_err(|e| {
        let path = e.path().to_string();
        ManifestError::at(path, e.into_inner().to_string())
    })?;
    manifest.validate()?;
    Ok(manifest)
}

/// Canonical bytes: sorted keys, no whitespace.
pub fn serialize_manifest(m: &PackageManifest) -> Vec<u8> {
    canonical::to_canonical_vec(m)
}

impl PackageManifest {
    pub fn validate(&self) -> Result<(), ManifestError> {
        if !is_service_name(&self.name) {
            return Err(ManifestError::at("name", "must match [a-z][a-z0-9_]{0,62}"));
        }
        if !is_version(&self.version) {
            return Err(ManifestError::at(
                "version",
                "not a MAJOR.MINOR.PATCH version",
            ));
        }

        let iface = &self.interface;
        if iface.topics.is_empty() && iface.rpcs.is_empty() {
            return Err(ManifestError::at(
                "interface",
                "needs at least one topic or rpc",
            ));
        }
        let mut seen = std::collections::HashSet::new();
        for (i, t) in iface.topics.iter().enumerate() {
            let path = format!("interface.topics[{i}].name");
            check_channel_name(&t.name, &path)?;
            if !seen.insert(t.name.as_str()) {
                return Err(ManifestError::at(
                    path,
                    format!("duplicate name `{}`", t.name),
                ));
            }
        }
        for (i, r) in iface.rpcs.iter().enumerate() {
            let path = format!("interface.rpcs[{i}].name");
            check_channel_name(&r.name, &path)?;
            if !seen.insert(r.name.as_str()) {
                return Err(ManifestError::at(
                    path,
                    format!("duplicate name `{}`", r.name),
                ));
            }
        }

        self.validate_workload()?;
        self.default_resources.validate("default_resources")
    }

    fn validate_workload(&self) -> Result<(), ManifestError> {
        let w = &self.workload;
        match w.kind {
            WorkloadKind::BuiltinStateless => {
                if w.params.contains_key(PARAM_STATE_GROWTH) {
                    return Err(ManifestError::at(
                        format!("workload.params.{PARAM_STATE_GROWTH}"),
                        "not allowed for builtin_stateless",
                    ));
                }
                if self.stateful {
                    return Err(ManifestError::at(
                        "workload.kind",
                        "builtin_stateless workload in a stateful package",
                    ));
                }
            }
            WorkloadKind::BuiltinStateful => {
                if !w.params.contains_key(PARAM_STATE_GROWTH) {
                    return Err(ManifestError::at(
                        format!("workload.params.{PARAM_STATE_GROWTH}"),
                        "required for builtin_stateful",
                    ));
                }
                if !self.stateful {
                    return Err(ManifestError::at(
                        "workload.kind",
                        "builtin_stateful workload in a stateless package",
                    ));
                }
            }
            WorkloadKind::ExternalProcess => {
                let ok = w
                    .params
                    .get(PARAM_COMMAND)
                    .and_then(Scalar::as_str)
                    .is_some_and(|c| !c.trim().is_empty());
                if !ok {
                    return Err(ManifestError::at(
                        format!("workload.params.{PARAM_COMMAND}"),
                        "external_process needs a non-empty command string",
                    ));
                }
            }
        }
        if w.is_builtin() {
            for key in [PARAM_BASE_WORK, PARAM_PER_KB_WORK, PARAM_STATE_GROWTH] {
                let Some(v) = w.params.get(key) else { continue };
                match v.as_f64() {
                    Some(x) if x >= 0.0 && x.is_finite() => {}
                    _ => {
                        return Err(ManifestError::at(
                            format!("workload.params.{key}"),
                            "must be a non-negative number",
                        ))
                    }
                }
            }
        }
        Ok(())
    }
}

fn is_service_name(s: &str) -> bool {
    let b = s.as_bytes();
    !b.is_empty()
        && b.len() <= 63
        && b[0].is_ascii_lowercase()
        && b[1..]
            .iter()
            .all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || *c == b'_')
}

fn check_channel_name(name: &str, path: &str) -> Result<(), ManifestError> {
    let ok = !name.is_empty()
        && name.len() <= 128
        && name
            .bytes()
            .all(|c| c.is_ascii_alphanumeric() || c == b'_' || c == b'/');
    if ok {
        Ok(())
    } else {
        Err(ManifestError::at(path, "names use [A-Za-z0-9_/] only"))
    }
}

fn is_version(s: &str) -> bool {
    let core = s.split(['-', '+']).next().unwrap_or("");
    let parts: Vec<&str> = core.split('.').collect();
    parts.len() == 3
        && parts
            .iter()
            .all(|p| !p.is_empty() && p.bytes().all(|c| c.is_ascii_digit()))
}
