//! Wall-clock execution of a scenario: the real [`Stub`] against a live
//! in-process [`Portal`], with network conditions applied to the link
//! before each request. Under a paused tokio clock this runs in virtual
//! time too, which the tests use.

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tokio::task::JoinSet;
use tokio::time::Instant;

use super::metrics::RequestRow;
use super::network::inject_network;
use super::report::MetricsReport;
use super::scenario::{ClientMode, Scenario, ScenarioError};
use crate::link::InProcessLink;
use crate::manifest::ResourceQuota;
use crate::portal::Portal;
use crate::protocol::Payload;
use crate::schema::{SchemaRef, SchemaValue};
use crate::servant::{BuiltinWorkloadModel, Sandbox};
use crate::stub::{RequestOutcome, Stub, StubConfig, StubError, Winner};
use crate::stubgen::StubDescriptor;

/// A value of `schema` whose encoding is roughly `bytes` long.
pub fn synthetic_value<R: Rng + ?Sized>(schema: SchemaRef, bytes: u64, rng: &mut R) -> SchemaValue {
    let mut fill = |n: usize| (0..n).map(|_| rng.random::<u8>()).collect::<Vec<u8>>();
    match schema {
        SchemaRef::Blob => SchemaValue::Blob(fill(bytes as usize)),
        SchemaRef::ImageRgb => {
            let width = (bytes / 3).max(1) as u32;
            SchemaValue::ImageRgb {
                width,
                height: 1,
                pixels: fill(width as usize * 3),
            }
        }
        SchemaRef::GridMap => SchemaValue::GridMap {
            width: bytes.max(1) as u32,
            height: 1,
            cells: fill(bytes.max(1) as usize),
        },
        SchemaRef::Pose => SchemaValue::Pose {
            x: 0.0,
            y: 0.0,
            theta: 0.0,
        },
        SchemaRef::Detections => SchemaValue::Detections(Vec::new()),
    }
}

type Outcome = (u64, Result<RequestOutcome, StubError>);

pub async fn run_realtime(sc: &Scenario, portal: &Portal) -> Result<MetricsReport, ScenarioError> {
    sc.validate()?;
    let entry = portal
        .service(&sc.service.service)
        .ok_or_else(|| ScenarioError::UndeployedService(sc.service.service.clone()))?;
    let manifest = entry.manifest.clone();
    let mut schemas = BTreeMap::new();
    for w in &sc.workload_timeline {
        let rpc =
            manifest
                .interface
                .rpc(&w.target)
                .ok_or_else(|| ScenarioError::UnknownTarget {
                    service: manifest.name.clone(),
                    target: w.target.clone(),
                })?;
        schemas.insert(w.target.clone(), rpc.request_schema);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(sc.seed);

    if sc.mode == ClientMode::Native {
        let rows = run_native(sc, &manifest, &schemas, &mut rng).await?;
        return Ok(MetricsReport::new(sc, rows, true));
    }

    let mut descriptor = StubDescriptor::from_bytes(&entry.stub_bytes)
        .map_err(|e| ScenarioError::Invalid(e.to_string()))?;
    if sc.mode == ClientMode::Cloud {
        descriptor.local_fallback = None;
    }
    let link = InProcessLink::connect(portal);
    link.set_up(sc.network(1).up);
    let config = StubConfig {
        t_desire_ms: Some(sc.service.t_desire_ms),
        t_max_ms: Some(sc.service.t_max_ms),
        q_threshold: sc.service.q_threshold,
        resources: sc.service.resources,
        local_cpu_millicores: sc.local.cpu_millicores,
        local_memory_mb: manifest.default_resources.memory_mb,
    };
    let stub = Stub::connect(descriptor.clone(), config, Arc::new(link.clone()))
        .await
        .map_err(|e| ScenarioError::Invalid(format!("stub: {e}")))?;

    let start = Instant::now();
    let mut offset = 0.0;
    let mut tasks: JoinSet<Outcome> = JoinSet::new();
    for i in 1..=sc.request_count {
        let w = sc.workload(i);
        tokio::time::sleep_until(start + Duration::from_secs_f64(offset / 1000.0)).await;
        let seg = sc.network(i);
        link.set_up(seg.up);
        if let Some(d) = inject_network(seg, w.payload_bytes, &mut rng) {
            link.set_delay_ms(d);
        }
        let value = synthetic_value(schemas[&w.target], w.payload_bytes, &mut rng);
        let payload = Payload::from_value(&value, descriptor.codec_for(value.schema()));
        let stub = stub.clone();
        let target = w.target.clone();
        tasks.spawn(async move { (i, stub.invoke_payload(&target, payload).await) });
        // Let the invoke claim its request index before the next one.
        tokio::task::yield_now().await;
        offset += w.period_ms;
    }
    let mut outcomes = BTreeMap::new();
    while let Some(done) = tasks.join_next().await {
        if let Ok((i, r)) = done {
            outcomes.insert(i, r);
        }
    }
    stub.shutdown().await;
    link.close().await;

    let by_request: BTreeMap<String, u64> = outcomes
        .iter()
        .filter_map(|(i, r)| r.as_ref().ok().map(|o| (o.request_id.clone(), *i)))
        .collect();
    let mut rows: BTreeMap<u64, RequestRow> = (1..=sc.request_count)
        .map(|i| {
            let mut row = RequestRow {
                index: i,
                t_remote: None,
                t_local_ms: None,
                winner: None,
                serving_ms: None,
                q_after: None,
                action: crate::stub::Action::None,
            };
            if let Some(Ok(o)) = outcomes.get(&i) {
                row.winner = Some(o.winner);
                row.serving_ms = Some(o.latency_ms);
                if o.winner == Winner::Local {
                    row.t_local_ms = Some(o.latency_ms);
                }
            }
            (i, row)
        })
        .collect();
    for rec in stub.trace() {
        if let Some(i) = by_request.get(&format!("r{}", rec.index)) {
            let row = rows.get_mut(i).expect("index in range");
            row.t_remote = rec.t_remote;
            row.q_after = rec.q_after;
            row.action = rec.action;
        }
    }
    Ok(MetricsReport::new(sc, rows.into_values().collect(), true))
}

async fn run_native(
    sc: &Scenario,
    manifest: &Arc<crate::manifest::PackageManifest>,
    schemas: &BTreeMap<String, SchemaRef>,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<RequestRow>, ScenarioError> {
    let quota = ResourceQuota::new(
        sc.local.cpu_millicores,
        manifest.default_resources.memory_mb,
    );
    let model = BuiltinWorkloadModel::from_spec(&manifest.workload)
        .ok_or_else(|| ScenarioError::Invalid("native mode needs a builtin workload".into()))?;
    let sandbox = Sandbox::launch("native", manifest.clone(), quota)
        .await
        .map_err(|e| ScenarioError::Invalid(e.to_string()))?;
    let stateful = manifest.stateful;
    let mut rows = Vec::new();
    let start = Instant::now();
    let mut offset = 0.0;
    let mut frames = 0u64;
    for i in 1..=sc.request_count {
        let w = sc.workload(i);
        tokio::time::sleep_until(start + Duration::from_secs_f64(offset / 1000.0)).await;
        let issued = Instant::now();
        let mult = match sc.local.contention {
            Some(c) if c.max > c.min => rng.random_range(c.min..=c.max),
            Some(c) => c.min,
            None => 1.0,
        };
        let value = synthetic_value(schemas[&w.target], w.payload_bytes, rng);
        let encoded_len = value.encode().len();
        let payload = Payload::from_value(&value, crate::protocol::Compression::None);
        let replies = sandbox
            .execute(crate::protocol::Envelope::call(
                i.to_string(),
                &w.target,
                payload,
            ))
            .await;
        let extra = (mult - 1.0) * model.service_time_ms(encoded_len, quota.cpu_millicores, frames);
        if extra > 0.0 {
            tokio::time::sleep(Duration::from_secs_f64(extra / 1000.0)).await;
        }
        if stateful {
            frames += 1;
        }
        let ok = replies
            .iter()
            .any(|e| e.op == crate::protocol::Op::Response);
        let served = issued.elapsed().as_secs_f64() * 1000.0;
        rows.push(RequestRow {
            index: i,
            t_remote: None,
            t_local_ms: ok.then_some(served),
            winner: ok.then_some(Winner::Local),
            serving_ms: ok.then_some(served),
            q_after: None,
            action: crate::stub::Action::None,
        });
        offset += w.period_ms;
    }
    sandbox.stop().await;
    Ok(rows)
}
