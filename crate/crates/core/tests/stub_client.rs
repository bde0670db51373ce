use std::sync::Arc;

use cloudroid::choreographer::{Choreographer, NodePool, SlaDictionary};
use cloudroid::link::InProcessLink;
use cloudroid::portal::Portal;
use cloudroid::protocol::{Compression, Payload};
use cloudroid::samples::{self, DETECTOR_MANIFEST, MAPPER_MANIFEST};
use cloudroid::schema::SchemaValue;
use cloudroid::stub::{
    local_result_equivalence, Action, Mode, RemoteTime, Stub, StubConfig, StubError, Winner,
};
use cloudroid::stubgen::StubDescriptor;

const EPS: f64 = 5.0;

fn portal() -> Portal {
    let p = Portal::new(
        Choreographer::new(SlaDictionary::default(), NodePool::uniform(2, 16000, 8192)),
        "ws://localhost/ws",
    );
    p.deploy(DETECTOR_MANIFEST.as_bytes(), false).unwrap();
    p.deploy(MAPPER_MANIFEST.as_bytes(), false).unwrap();
    p
}

fn descriptor(p: &Portal, service: &str) -> StubDescriptor {
    StubDescriptor::from_bytes(&p.stub(service).unwrap()).unwrap()
}

fn image(seed: u8) -> SchemaValue {
    SchemaValue::ImageRgb {
        width: 2,
        height: 2,
        pixels: (0..12).map(|i| i ^ seed).collect(),
    }
}

fn grid(seed: u8) -> SchemaValue {
    SchemaValue::GridMap {
        width: 4,
        height: 4,
        cells: (0..16u8).map(|i| i.wrapping_mul(seed)).collect(),
    }
}

async fn detector_stub(p: &Portal, link: &InProcessLink, config: StubConfig) -> Stub {
    Stub::connect(descriptor(p, "detect"), config, Arc::new(link.clone()))
        .await
        .unwrap()
}

// Detector service time with default quota is ~200 ms for tiny images.
fn cfg() -> StubConfig {
    StubConfig::with_times(300, 600)
}

#[tokio::test(start_paused = true)]
async fn fast_remote_wins_alone() {
    let p = portal();
    let link = InProcessLink::connect(&p);
    let stub = detector_stub(&p, &link, cfg()).await;
    assert!(stub.is_granted());
    let out = stub.invoke("detect", &image(1)).await.unwrap();
    assert_eq!(out.winner, Winner::Remote);
    assert!((out.latency_ms - 200.0).abs() < EPS, "{}", out.latency_ms);
    stub.quiesce().await;
    assert_eq!(stub.satisfaction().q, 12.0);
    assert!(!stub.local_copy_running().await);
}

#[tokio::test(start_paused = true)]
async fn degradation_starts_local_and_local_wins_races() {
    let p = portal();
    let link = InProcessLink::connect(&p);
    let stub = detector_stub(&p, &link, cfg()).await;
    link.set_delay_ms(300.0);

    // 300 + 200 + 300 = 800 > t_max: halve to 5 and start the local copy.
    let first = stub.invoke("detect", &image(1)).await.unwrap();
    assert_eq!(first.winner, Winner::Remote);
    stub.quiesce().await;
    assert_eq!(stub.satisfaction().q, 5.0);
    assert!(stub.local_copy_running().await);

    let second = stub.invoke("detect", &image(2)).await.unwrap();
    assert_eq!(second.winner, Winner::Local);
    assert!(second.latency_ms <= 200.0 + EPS, "{}", second.latency_ms);
    stub.quiesce().await;
    // The remote time, not the local one, moved q.
    assert_eq!(stub.satisfaction().q, 2.5);

    let trace = stub.trace();
    assert_eq!(trace.len(), 2);
    assert_eq!(trace[0].action, Action::StartLocal);
    assert_eq!(trace[1].winner, Winner::Local);
    match trace[1].t_remote {
        Some(RemoteTime::Completed(ms)) => assert!((ms - 800.0).abs() < EPS),
        other => panic!("unexpected {other:?}"),
    }
}

#[tokio::test(start_paused = true)]
async fn stalled_remote_is_rescued_locally() {
    let p = portal();
    let link = InProcessLink::connect(&p);
    let stub = detector_stub(&p, &link, cfg()).await;
    link.set_delay_ms(100_000.0);
    let out = stub.invoke("detect", &image(3)).await.unwrap();
    assert_eq!(out.winner, Winner::Local);
    assert_eq!(out.t_remote, Some(RemoteTime::TimedOut));
    // Timeout at 2 * t_max, then local service time.
    assert!(out.latency_ms <= 1200.0 + 200.0 + EPS, "{}", out.latency_ms);
    stub.quiesce().await;
    assert_eq!(stub.satisfaction().q, 5.0);
}

#[tokio::test(start_paused = true)]
async fn race_soundness_remote_faster_than_local() {
    let p = portal();
    let link = InProcessLink::connect(&p);
    // Local copy at half the cloud quota: 400 ms.
    let config = StubConfig {
        local_cpu_millicores: 500,
        ..cfg()
    };
    let stub = detector_stub(&p, &link, config).await;
    link.set_delay_ms(300.0);
    stub.invoke("detect", &image(1)).await.unwrap();
    stub.quiesce().await;
    assert!(stub.local_copy_running().await);
    link.set_delay_ms(0.0);
    let out = stub.invoke("detect", &image(2)).await.unwrap();
    assert_eq!(out.winner, Winner::Remote);
    assert!(out.latency_ms <= 200.0 + EPS, "{}", out.latency_ms);
}

#[tokio::test(start_paused = true)]
async fn failover_liveness_with_link_down_all_run() {
    let p = portal();
    let link = InProcessLink::connect(&p);
    link.set_up(false);
    let stub = detector_stub(&p, &link, cfg()).await;
    assert!(!stub.is_granted());
    for i in 0..100u8 {
        let out = stub.invoke("detect", &image(i)).await.unwrap();
        assert_eq!(out.winner, Winner::Local);
        assert!(out.latency_ms <= 1200.0 + 200.0 + EPS);
    }
    assert_eq!(stub.mode(), Mode::Failover);
    assert!(p.servants().is_empty());
}

#[tokio::test(start_paused = true)]
async fn no_fallback_means_service_down() {
    let p = portal();
    let link = InProcessLink::connect(&p);
    let mut d = descriptor(&p, "detect");
    d.local_fallback = None;
    let stub = Stub::connect(d, cfg(), Arc::new(link.clone()))
        .await
        .unwrap();
    link.set_up(false);
    assert_eq!(
        stub.invoke("detect", &image(1)).await,
        Err(StubError::ServiceDown)
    );
    assert_eq!(stub.mode(), Mode::Unavailable);
    link.set_up(true);
    assert!(stub.invoke("detect", &image(1)).await.is_ok());
}

#[tokio::test(start_paused = true)]
async fn unknown_target_and_wrong_schema() {
    let p = portal();
    let link = InProcessLink::connect(&p);
    let stub = detector_stub(&p, &link, cfg()).await;
    assert!(matches!(
        stub.invoke("nope", &image(1)).await,
        Err(StubError::UnknownTarget(_))
    ));
    assert!(matches!(
        stub.invoke("detect", &grid(1)).await,
        Err(StubError::Codec(_))
    ));
}

fn frames_of(out: &cloudroid::stub::RequestOutcome) -> u64 {
    match out.payload.to_value().unwrap() {
        SchemaValue::Blob(b) => u64::from_be_bytes(b[..8].try_into().unwrap()),
        other => panic!("unexpected {other:?}"),
    }
}

#[tokio::test(start_paused = true)]
async fn stateful_restore_regrants_fresh_servant() {
    let p = portal();
    let link = InProcessLink::connect(&p);
    let stub = Stub::connect(descriptor(&p, "mapper"), cfg(), Arc::new(link.clone()))
        .await
        .unwrap();
    let before = p.session_grants(link.session_id())["mapper"].clone();
    for i in 1..=3u8 {
        let out = stub.invoke("update", &grid(i)).await.unwrap();
        assert_eq!(frames_of(&out), i as u64);
    }
    link.set_up(false);
    let local = stub.invoke("update", &grid(9)).await.unwrap();
    assert_eq!(local.winner, Winner::Local);
    link.set_up(true);
    let out = stub.invoke("update", &grid(4)).await.unwrap();
    assert_eq!(out.winner, Winner::Remote);
    assert_eq!(frames_of(&out), 1);
    let after = p.session_grants(link.session_id())["mapper"].clone();
    assert_ne!(before, after);
    assert_eq!(p.servants().len(), 1);
    assert!(!stub.local_copy_running().await);
}

#[tokio::test(start_paused = true)]
async fn stateful_never_races() {
    let p = portal();
    let link = InProcessLink::connect(&p);
    let stub = Stub::connect(descriptor(&p, "mapper"), cfg(), Arc::new(link.clone()))
        .await
        .unwrap();
    link.set_delay_ms(400.0);
    for i in 0..4u8 {
        let out = stub.invoke("update", &grid(i)).await.unwrap();
        assert_eq!(out.winner, Winner::Remote);
    }
    stub.quiesce().await;
    assert!(stub.satisfaction().q < 10.0);
    assert!(!stub.local_copy_running().await);
    assert!(stub.trace().iter().all(|r| r.action == Action::None));
}

#[tokio::test(start_paused = true)]
async fn publish_reaches_subscriber_remote_and_local() {
    let p = portal();
    let link = InProcessLink::connect(&p);
    let stub = Stub::connect(descriptor(&p, "mapper"), cfg(), Arc::new(link.clone()))
        .await
        .unwrap();
    let mut rx = stub.subscribe();
    stub.publish("scan", &grid(1)).await.unwrap();
    let e = rx.recv().await.unwrap();
    assert_eq!(e.target, "map_status");
    link.set_up(false);
    stub.publish("scan", &grid(2)).await.unwrap();
    let e = rx.recv().await.unwrap();
    assert_eq!(e.target, "map_status");
}

#[tokio::test(start_paused = true)]
async fn local_and_remote_results_match() {
    let p = portal();
    let link = InProcessLink::connect(&p);
    let stub = detector_stub(&p, &link, cfg()).await;
    let remote = stub.invoke("detect", &image(7)).await.unwrap();
    link.set_up(false);
    let local = stub.invoke("detect", &image(7)).await.unwrap();
    assert_eq!(remote.winner, Winner::Remote);
    assert_eq!(local.winner, Winner::Local);
    assert_eq!(
        remote.payload.to_value().unwrap(),
        local.payload.to_value().unwrap()
    );
}

#[test]
fn equivalence_helper() {
    let det = samples::detector();
    let d = cloudroid::stubgen::generate_stub(&det, "ws://x/ws");
    let payloads: Vec<Payload> = (0..20)
        .map(|i| Payload::from_value(&image(i), Compression::Deflate))
        .chain([Payload::from_value(
            &SchemaValue::ImageRgb {
                width: 0,
                height: 0,
                pixels: vec![],
            },
            Compression::None,
        )])
        .collect();
    assert!(local_result_equivalence(&d, &det, "detect", &payloads));

    let map = samples::mapper();
    let d = cloudroid::stubgen::generate_stub(&map, "ws://x/ws");
    let frames: Vec<Payload> = (0..30)
        .map(|i| Payload::from_value(&grid(i), Compression::Zlib))
        .collect();
    assert!(local_result_equivalence(&d, &map, "update", &frames));
}
