//! Ready-made scenarios for the QoS experiments.

use super::scenario::{
    ClientMode, Contention, LocalExecutor, NetworkSegment, Scenario, ServiceUse, WorkloadSegment,
};
use crate::manifest::ResourceQuota;

/// Degradation windows of the dynamic-network experiment, inclusive.
pub const FIG8_WINDOWS: [(u64, u64); 3] = [(24, 45), (75, 96), (111, 122)];
pub const FIG8_REQUESTS: u64 = 180;

/// 64x48 RGB frame.
const FRAME_BYTES: u64 = 64 * 48 * 3;

fn net(from: u64, to: u64, base: f64, jitter: f64, up: bool) -> NetworkSegment {
    NetworkSegment {
        from_request: from,
        to_request: to,
        base_latency_ms: base,
        jitter_ms: jitter,
        bandwidth_kbps: 20_000.0,
        up,
    }
}

fn frames(n: u64, period_ms: f64) -> Vec<WorkloadSegment> {
    vec![WorkloadSegment {
        from_request: 1,
        to_request: n,
        target: "detect".into(),
        payload_bytes: FRAME_BYTES,
        response_bytes: 256,
        period_ms,
    }]
}

fn detector_use(resources: Option<ResourceQuota>) -> ServiceUse {
    ServiceUse {
        service: "detect".into(),
        t_desire_ms: 100,
        t_max_ms: 300,
        q_threshold: None,
        resources,
    }
}

const CLOUD: ResourceQuota = ResourceQuota::new(4000, 1024);

/// Steady network with a fast cloud: every request meets `t_desire`.
pub fn flat(seed: u64, n: u64) -> Scenario {
    Scenario {
        name: "flat".into(),
        seed,
        request_count: n,
        mode: ClientMode::Stub,
        service: detector_use(Some(CLOUD)),
        local: LocalExecutor::default(),
        network_timeline: vec![net(1, n, 10.0, 5.0, true)],
        workload_timeline: frames(n, 1000.0),
    }
}

/// The dynamic-network experiment: round trips far above `t_max` during
/// the three windows, the link itself stays up.
pub fn fig8(seed: u64) -> Scenario {
    let mut timeline = Vec::new();
    let mut next = 1;
    for (a, b) in FIG8_WINDOWS {
        timeline.push(net(next, a - 1, 10.0, 5.0, true));
        timeline.push(net(a, b, 400.0, 50.0, true));
        next = b + 1;
    }
    timeline.push(net(next, FIG8_REQUESTS, 10.0, 5.0, true));
    Scenario {
        name: "fig8".into(),
        network_timeline: timeline,
        ..flat(seed, FIG8_REQUESTS)
    }
}

/// Like [`fig8`] but the windows are real outages that drop every frame.
pub fn fig8_outage(seed: u64) -> Scenario {
    let mut sc = fig8(seed);
    sc.name = "fig8_outage".into();
    for seg in &mut sc.network_timeline {
        if seg.base_latency_ms > 100.0 {
            seg.up = false;
        }
    }
    sc
}

/// Link down from the first request to the last.
pub fn outage(seed: u64, n: u64) -> Scenario {
    Scenario {
        name: "outage".into(),
        network_timeline: vec![net(1, n, 10.0, 5.0, false)],
        ..flat(seed, n)
    }
}

/// Onboard execution on a computer shared with other robot software.
pub fn sd_native(seed: u64) -> Scenario {
    Scenario {
        name: "sd_native".into(),
        mode: ClientMode::Native,
        local: LocalExecutor {
            cpu_millicores: 1000,
            contention: Some(Contention { min: 1.0, max: 3.0 }),
        },
        ..flat(seed, 200)
    }
}

/// The same stream served by an uncontended cloud servant.
pub fn sd_cloud(seed: u64) -> Scenario {
    Scenario {
        name: "sd_cloud".into(),
        mode: ClientMode::Cloud,
        network_timeline: vec![net(1, 200, 20.0, 10.0, true)],
        ..flat(seed, 200)
    }
}

/// Looks a builder up by scenario name.
pub fn by_name(name: &str, seed: u64) -> Option<Scenario> {
    Some(match name {
        "flat" => flat(seed, 100),
        "fig8" => fig8(seed),
        "fig8_outage" => fig8_outage(seed),
        "outage" => outage(seed, 100),
        "sd_native" => sd_native(seed),
        "sd_cloud" => sd_cloud(seed),
        _ => return None,
    })
}
