//! Reference packages used by the scenarios, the examples in the README and
//! the test suites: a stateless object detector and a stateful mapper whose
//! per-request cost grows with every frame it has absorbed.

use crate::manifest::{parse_manifest, PackageManifest};

pub const DETECTOR_MANIFEST: &str = r#"{
  "name": "detect",
  "version": "1.0.0",
  "stateful": false,
  "interface": {
    "topics": [],
    "rpcs": [
      {"name": "detect", "request_schema": "image_rgb", "response_schema": "detections"}
    ]
  },
  "workload": {
    "kind": "builtin_stateless",
    "params": {"base_work_millicore_ms": 200, "per_kb_work_millicore_ms": 2.0}
  },
  "default_resources": {"cpu_millicores": 1000, "memory_mb": 256}
}"#;

pub const MAPPER_MANIFEST: &str = r#"{
  "name": "mapper",
  "version": "0.3.1",
  "stateful": true,
  "interface": {
    "topics": [
      {"name": "scan", "direction": "inbound", "schema": "grid_map"},
      {"name": "map_status", "direction": "outbound", "schema": "blob"}
    ],
    "rpcs": [
      {"name": "update", "request_schema": "grid_map", "response_schema": "blob"}
    ]
  },
  "workload": {
    "kind": "builtin_stateful",
    "params": {"base_work_millicore_ms": 100, "per_kb_work_millicore_ms": 1.0, "state_growth_ms": 1.5}
  },
  "default_resources": {"cpu_millicores": 1000, "memory_mb": 512}
}"#;

pub fn detector() -> PackageManifest {
    parse_manifest(DETECTOR_MANIFEST.as_bytes()).expect("sample detector manifest is valid")
}

pub fn mapper() -> PackageManifest {
    parse_manifest(MAPPER_MANIFEST.as_bytes()).expect("sample mapper manifest is valid")
}
