use std::sync::Arc;

use cloudroid::choreographer::{Choreographer, NodePool, SlaDictionary};
use cloudroid::manifest::ResourceQuota;
use cloudroid::portal::{Portal, SessionHandle};
use cloudroid::protocol::{Compression, Envelope, Op, Payload, SlaDeclaration};
use cloudroid::samples::{self, DETECTOR_MANIFEST, MAPPER_MANIFEST};
use cloudroid::schema::SchemaValue;
use cloudroid::servant::BuiltinSandbox;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const FRAMES: usize = 50;

fn portal() -> Portal {
    let p = Portal::new(
        Choreographer::new(SlaDictionary::default(), NodePool::uniform(2, 16000, 8192)),
        "ws://localhost/ws",
    );
    p.deploy(DETECTOR_MANIFEST.as_bytes(), false).unwrap();
    p.deploy(MAPPER_MANIFEST.as_bytes(), false).unwrap();
    p
}

fn frames(rng: &mut ChaCha8Rng) -> Vec<Payload> {
    (0..FRAMES)
        .map(|_| {
            let (w, h) = (rng.random_range(1..16), rng.random_range(1..16));
            let cells = (0..w * h).map(|_| rng.random::<u8>()).collect();
            Payload::from_value(
                &SchemaValue::GridMap {
                    width: w,
                    height: h,
                    cells,
                },
                Compression::Zlib,
            )
        })
        .collect()
}

/// What a lone client would see: the same frames against a fresh servant.
fn oracle(session: &str, frames: &[Payload]) -> Vec<(String, Vec<u8>)> {
    let mut sb = BuiltinSandbox::new(
        "oracle",
        Arc::new(samples::mapper()),
        ResourceQuota::new(1000, 256),
    )
    .unwrap();
    frames
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let env = Envelope::call(format!("{session}-{i}"), "update", p.clone());
            let r = sb.process(&env).replies.remove(0);
            (r.id, r.payload.unwrap().to_value().unwrap().encode())
        })
        .collect()
}

async fn grant(p: &Portal, h: &mut SessionHandle) -> String {
    let sla = SlaDeclaration::times(100, 300);
    p.handle(&h.session_id, Envelope::request_service("g", "mapper", sla))
        .await;
    let reply = h.outbound.recv().await.unwrap();
    assert_eq!(reply.op, Op::ServiceGranted);
    reply.servant_id.unwrap()
}

async fn collect(h: &mut SessionHandle) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    while out.len() < FRAMES {
        let r = h.outbound.recv().await.unwrap();
        assert_eq!(r.op, Op::Response, "{r:?}");
        out.push((r.id, r.payload.unwrap().to_value().unwrap().encode()));
    }
    out
}

#[tokio::test(start_paused = true)]
async fn interleaved_sessions_match_single_session_replay() {
    for seed in 0..50u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = portal();
        let mut a = p.open_session();
        let mut b = p.open_session();
        let (sa, sb) = (grant(&p, &mut a).await, grant(&p, &mut b).await);
        assert_ne!(sa, sb);

        let fa = frames(&mut rng);
        let fb = frames(&mut rng);
        let (mut ia, mut ib) = (0, 0);
        while ia < FRAMES || ib < FRAMES {
            let pick_a = ib == FRAMES || (ia < FRAMES && rng.random_bool(0.5));
            if pick_a {
                p.handle(
                    &a.session_id,
                    Envelope::call(format!("{}-{ia}", a.session_id), "update", fa[ia].clone()),
                )
                .await;
                ia += 1;
            } else {
                p.handle(
                    &b.session_id,
                    Envelope::call(format!("{}-{ib}", b.session_id), "update", fb[ib].clone()),
                )
                .await;
                ib += 1;
            }
            if rng.random_bool(0.3) {
                tokio::task::yield_now().await;
            }
        }
        assert_eq!(
            collect(&mut a).await,
            oracle(&a.session_id, &fa),
            "seed {seed}"
        );
        assert_eq!(
            collect(&mut b).await,
            oracle(&b.session_id, &fb),
            "seed {seed}"
        );
        p.close_session(&a.session_id).await;
        p.close_session(&b.session_id).await;
        assert!(p.servants().is_empty());
    }
}
