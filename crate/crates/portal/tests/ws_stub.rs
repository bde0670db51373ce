//! The stub talking to a real portal over websockets.

mod common;

use std::sync::Arc;
use std::time::Duration;

use cloudroid::schema::SchemaValue;
use cloudroid::stub::{KeepaliveDetector, LinkStatus, RemoteLink, Stub, StubConfig, Winner};
use cloudroid::stubgen::StubDescriptor;
use cloudroid_portal::WsLink;
use common::{start, TOKEN};

fn image(seed: u8) -> SchemaValue {
    SchemaValue::ImageRgb {
        width: 4,
        height: 4,
        pixels: (0..48).map(|i: u8| i ^ seed).collect(),
    }
}

#[tokio::test]
async fn invokes_go_remote_and_keepalive_stays_up() {
    let rp = start().await;
    let d = StubDescriptor::from_bytes(&rp.portal.stub("detect").unwrap()).unwrap();
    let link = WsLink::connect_with(&rp.ws_url(), Some(TOKEN), KeepaliveDetector::new(20, 3))
        .await
        .unwrap();
    let stub = Stub::connect(d, StubConfig::with_times(300, 600), Arc::new(link.clone()))
        .await
        .unwrap();
    for i in 0..3 {
        let out = stub.invoke("detect", &image(i)).await.unwrap();
        assert_eq!(out.winner, Winner::Remote);
        assert!(out.latency_ms >= 200.0);
    }
    tokio::time::sleep(Duration::from_millis(100)).await;
    assert_eq!(link.status(), LinkStatus::Up);
    stub.shutdown().await;
    rp.stop().await;
}

#[tokio::test]
async fn mapper_stream_counts_frames() {
    let rp = start().await;
    let d = StubDescriptor::from_bytes(&rp.portal.stub("mapper").unwrap()).unwrap();
    let link = WsLink::connect(&rp.ws_url(), Some(TOKEN)).await.unwrap();
    let stub = Stub::connect(d, StubConfig::with_times(300, 600), Arc::new(link.clone()))
        .await
        .unwrap();
    let mut topics = stub.subscribe();
    for i in 1..=5u64 {
        let grid = SchemaValue::GridMap {
            width: 2,
            height: 2,
            cells: vec![i as u8; 4],
        };
        let out = stub.invoke("update", &grid).await.unwrap();
        let SchemaValue::Blob(b) = out.payload.to_value().unwrap() else {
            panic!()
        };
        assert_eq!(u64::from_be_bytes(b[..8].try_into().unwrap()), i);
    }
    let grid = SchemaValue::GridMap {
        width: 1,
        height: 1,
        cells: vec![0],
    };
    stub.publish("scan", &grid).await.unwrap();
    let e = tokio::time::timeout(Duration::from_secs(5), topics.recv())
        .await
        .unwrap()
        .unwrap();
    assert_eq!(e.target, "map_status");
    stub.shutdown().await;
    rp.stop().await;
}

#[tokio::test]
async fn server_shutdown_fails_over_to_local() {
    let rp = start().await;
    let d = StubDescriptor::from_bytes(&rp.portal.stub("detect").unwrap()).unwrap();
    let link = WsLink::connect(&rp.ws_url(), Some(TOKEN)).await.unwrap();
    let stub = Stub::connect(d, StubConfig::with_times(300, 600), Arc::new(link.clone()))
        .await
        .unwrap();
    assert_eq!(
        stub.invoke("detect", &image(1)).await.unwrap().winner,
        Winner::Remote
    );
    rp.stop().await;
    tokio::time::timeout(Duration::from_secs(5), async {
        while link.is_open() {
            tokio::time::sleep(Duration::from_millis(10)).await;
        }
    })
    .await
    .unwrap();
    assert_eq!(link.status(), LinkStatus::Down);
    for i in 0..3 {
        let out = stub.invoke("detect", &image(i)).await.unwrap();
        assert_eq!(out.winner, Winner::Local);
    }
    stub.shutdown().await;
}
