use std::collections::BTreeMap;

use cloudroid::choreographer::{
    Choreographer, ChoreographerError, NodePool, NodeSpec, SlaDictionary,
};
use cloudroid::manifest::ResourceQuota;
use cloudroid::par::sweep_range;
use cloudroid::protocol::SlaDeclaration;
use cloudroid::samples;
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SESSIONS: [&str; 4] = ["s0", "s1", "s2", "s3"];
const QUOTAS: [(u32, u32); 4] = [(500, 128), (1000, 256), (2000, 512), (4000, 1024)];

fn cluster() -> Choreographer {
    let pool = NodePool::new(vec![
        NodeSpec {
            node_id: "b".into(),
            cpu_millicores_total: 6000,
            memory_mb_total: 1536,
        },
        NodeSpec {
            node_id: "a".into(),
            cpu_millicores_total: 4000,
            memory_mb_total: 2048,
        },
        NodeSpec {
            node_id: "c".into(),
            cpu_millicores_total: 2000,
            memory_mb_total: 512,
        },
    ])
    .unwrap();
    let mut c = Choreographer::new(SlaDictionary::default(), pool);
    c.register_service(&samples::detector());
    c.register_service(&samples::mapper());
    c
}

/// Independent record of who holds what, built only from returned values.
#[derive(Default)]
struct Ledger {
    held: BTreeMap<String, (String, ResourceQuota)>,
}

impl Ledger {
    fn drop_id(&mut self, id: &str) {
        assert!(
            self.held.remove(id).is_some(),
            "released `{id}` twice or never held"
        );
    }

    fn check(&self, c: &Choreographer) {
        for n in c.pool().nodes() {
            let (cpu, mem) = self
                .held
                .values()
                .filter(|(node, _)| node == &n.node_id)
                .fold((0u64, 0u64), |(c, m), (_, q)| {
                    (c + q.cpu_millicores as u64, m + q.memory_mb as u64)
                });
            assert!(
                cpu <= n.cpu_millicores_total && mem <= n.memory_mb_total,
                "node {} overcommitted",
                n.node_id
            );
            assert_eq!(
                (cpu, mem),
                (n.cpu_millicores_used, n.memory_mb_used),
                "node {}",
                n.node_id
            );
        }
        let live: Vec<&String> = c.servants().map(|r| &r.servant_id).collect();
        assert_eq!(live, self.held.keys().collect::<Vec<_>>());
    }
}

/// Runs one random sequence and returns the placements it made.
fn run(seed: u64) -> Vec<(String, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut c = cluster();
    let mut ledger = Ledger::default();
    let mut placements = Vec::new();
    for _ in 0..rng.random_range(1..40) {
        let ids: Vec<String> = ledger.held.keys().cloned().collect();
        match rng.random_range(0..10) {
            0..=4 => {
                let service = if rng.random_bool(0.5) {
                    "detect"
                } else {
                    "mapper"
                };
                let (cpu, mem) = *QUOTAS.choose(&mut rng).unwrap();
                let sla = SlaDeclaration::resources(ResourceQuota::new(cpu, mem));
                let session = SESSIONS.choose(&mut rng).unwrap();
                match c.instantiate_servant(service, session, &sla) {
                    Ok(g) if g.created => {
                        let r = g.record;
                        assert_eq!(r.quota, ResourceQuota::new(cpu, mem));
                        placements.push((r.servant_id.clone(), r.node_id.clone()));
                        ledger.held.insert(r.servant_id, (r.node_id, r.quota));
                    }
                    Ok(g) => assert!(ledger.held.contains_key(&g.record.servant_id)),
                    Err(ChoreographerError::InsufficientResources { .. }) => {
                        // Brute force: no node had room.
                        for n in c.pool().nodes() {
                            assert!(n.free_cpu() < cpu as u64 || n.free_memory() < mem as u64);
                        }
                    }
                    Err(e) => panic!("{e}"),
                }
            }
            5 | 6 if !ids.is_empty() => {
                let id = ids.choose(&mut rng).unwrap();
                let _ = c.mark_running(id);
            }
            7 if !ids.is_empty() => {
                let id = ids.choose(&mut rng).unwrap().clone();
                let r = c.release_servant(&id).unwrap();
                ledger.drop_id(&r.servant_id);
            }
            8 if !ids.is_empty() => {
                let id = ids.choose(&mut rng).unwrap().clone();
                let session = SESSIONS.choose(&mut rng).unwrap();
                if let Some(r) = c.detach(&id, session).unwrap() {
                    ledger.drop_id(&r.servant_id);
                }
            }
            _ => {
                for r in c.session_closed(SESSIONS.choose(&mut rng).unwrap()) {
                    ledger.drop_id(&r.servant_id);
                }
            }
        }
        ledger.check(&c);
    }
    placements
}

#[test]
fn ten_thousand_sequences_conserve_capacity() {
    let first = sweep_range(10_000, run);
    let again = sweep_range(10_000, run);
    assert_eq!(first, again);
    assert!(first.iter().map(Vec::len).sum::<usize>() > 10_000);
}
