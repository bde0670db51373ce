//! Stub descriptors: the data a client stub interprets to mirror a deployed
//! package's interface and run it locally when the cloud falls short.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::canonical;
use crate::manifest::{InterfaceSpec, PackageManifest, WorkloadSpec};
use crate::protocol::{preferred_codec, Compression};
use crate::schema::SchemaRef;

pub const DEFAULT_Q_THRESHOLD: u32 = 10;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StubDefaults {
    pub q_threshold: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_desire_ms: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_max_ms: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StubDescriptor {
    /// Codecs for schemas that compress; anything absent goes uncompressed.
    pub compression_policy: BTreeMap<SchemaRef, Compression>,
    pub defaults: StubDefaults,
    pub interface: InterfaceSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub local_fallback: Option<WorkloadSpec>,
    pub portal_url: String,
    pub service: String,
    pub stateful: bool,
}

impl StubDescriptor {
    pub fn codec_for(&self, schema: SchemaRef) -> Compression {
        self.compression_policy
            .get(&schema)
            .copied()
            .unwrap_or(Compression::None)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        canonical::to_canonical_vec(self)
    }

    pub fn from_bytes(raw: &[u8]) -> Result<Self, serde_json::Error> {
        serde_json::from_slice(raw)
    }
}

/// Derives the stub descriptor for a deployed package.
pub fn generate_stub(manifest: &PackageManifest, portal_url: &str) -> StubDescriptor {
    let compression_policy = manifest
        .interface
        .schemas()
        .into_iter()
        .filter_map(|s| match preferred_codec(s) {
            Compression::None => None,
            codec => Some((s, codec)),
        })
        .collect();
    StubDescriptor {
        compression_policy,
        defaults: StubDefaults {
            q_threshold: DEFAULT_Q_THRESHOLD,
            t_desire_ms: None,
            t_max_ms: None,
        },
        interface: manifest.interface.clone(),
        local_fallback: Some(manifest.workload.clone()),
        portal_url: portal_url.to_string(),
        service: manifest.name.clone(),
        stateful: manifest.stateful,
    }
}
