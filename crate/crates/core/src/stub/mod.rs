//! The client-side stub: mirrors a wrapped service locally, tracks how well
//! the cloud meets the client's SLA, races a local copy when it does not,
//! and fails over to the local copy when the link drops.

mod client;
pub mod keepalive;
pub mod policy;
pub mod satisfaction;

pub use client::{
    LinkError, RemoteLink, RequestOutcome, RequestRecord, Stub, StubConfig, StubError, Winner,
};
pub use keepalive::{KeepaliveDetector, LinkStatus};
pub use policy::{FailoverAction, Mode, Plan, StubPolicy};
pub use satisfaction::{update_satisfaction, Action, RemoteTime, SatisfactionState};

use std::sync::Arc;

use crate::manifest::{PackageManifest, ResourceQuota};
use crate::protocol::{decompress_payload, Envelope, Op, Payload};
use crate::servant::BuiltinSandbox;
use crate::stubgen::StubDescriptor;

/// Replays `payloads` as calls to `target` on a fresh local copy built
/// from the descriptor and on a fresh servant of the deployed manifest,
/// and reports whether every result is identical. False when either side
/// is not a builtin workload.
pub fn local_result_equivalence(
    descriptor: &StubDescriptor,
    deployed: &PackageManifest,
    target: &str,
    payloads: &[Payload],
) -> bool {
    let Some(workload) = descriptor.local_fallback.clone() else {
        return false;
    };
    let local_manifest = PackageManifest {
        name: descriptor.service.clone(),
        version: "0.0.0".into(),
        stateful: descriptor.stateful,
        interface: descriptor.interface.clone(),
        workload,
        default_resources: ResourceQuota::new(1000, 512),
    };
    let local = BuiltinSandbox::new(
        "local",
        Arc::new(local_manifest),
        ResourceQuota::new(1000, 512),
    );
    let remote = BuiltinSandbox::new(
        "remote",
        Arc::new(deployed.clone()),
        deployed.default_resources,
    );
    let (Some(mut local), Some(mut remote)) = (local, remote) else {
        return false;
    };
    payloads.iter().enumerate().all(|(i, p)| {
        let call = Envelope::call(i.to_string(), target, p.clone());
        let a = local.process(&call).replies;
        let b = remote.process(&call).replies;
        a.len() == b.len() && a.iter().zip(&b).all(|(x, y)| same_result(x, y))
    })
}

fn same_result(a: &Envelope, b: &Envelope) -> bool {
    if (a.op, &a.id, &a.target, &a.status) != (b.op, &b.id, &b.target, &b.status) {
        return false;
    }
    match (&a.payload, &b.payload) {
        (Some(x), Some(y)) if a.op == Op::Response || a.op == Op::Publish => {
            x.schema == y.schema
                && matches!((decompress_payload(x), decompress_payload(y)), (Ok(p), Ok(q)) if p == q)
        }
        (x, y) => x == y,
    }
}
