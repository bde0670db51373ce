//! Builtin workloads: the analytic service-time model and deterministic
//! result synthesis shared by cloud servants, local copies and the
//! virtual-time harness.

use sha2::{Digest, Sha256};

use crate::manifest::{
    PackageManifest, ResourceQuota, WorkloadKind, WorkloadSpec, PARAM_BASE_WORK, PARAM_PER_KB_WORK,
    PARAM_STATE_GROWTH,
};
use crate::protocol::{codes, preferred_codec, Envelope, Op, Payload};
use crate::schema::{Detection, SchemaRef, SchemaValue};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BuiltinWorkloadModel {
    pub base_work_millicore_ms: f64,
    pub per_kb_work_millicore_ms: f64,
    pub state_growth_ms_per_frame: f64,
}

impl BuiltinWorkloadModel {
    /// `None` for external workloads.
    pub fn from_spec(spec: &WorkloadSpec) -> Option<Self> {
        if !spec.is_builtin() {
            return None;
        }
        Some(BuiltinWorkloadModel {
            base_work_millicore_ms: spec.param_f64(PARAM_BASE_WORK).unwrap_or(0.0),
            per_kb_work_millicore_ms: spec.param_f64(PARAM_PER_KB_WORK).unwrap_or(0.0),
            state_growth_ms_per_frame: spec.param_f64(PARAM_STATE_GROWTH).unwrap_or(0.0),
        })
    }

    /// `(base + per_kb * kb) * 1000 / cpu + growth * frames`, in ms.
    pub fn service_time_ms(
        &self,
        payload_bytes: usize,
        cpu_millicores: u32,
        frames_stored: u64,
    ) -> f64 {
        let kb = payload_bytes as f64 / 1024.0;
        let work = self.base_work_millicore_ms + self.per_kb_work_millicore_ms * kb;
        work * (1000.0 / cpu_millicores as f64)
            + self.state_growth_ms_per_frame * frames_stored as f64
    }
}

/// One unit of processed traffic.
#[derive(Debug, Clone, PartialEq)]
pub struct Execution {
    /// Envelopes emitted: a response or error for calls, outbound topic
    /// publishes for inbound publishes.
    pub replies: Vec<Envelope>,
    /// Modeled service time; zero for rejected traffic.
    pub service_ms: f64,
}

impl Execution {
    fn rejected(e: Envelope) -> Self {
        Execution {
            replies: vec![e],
            service_ms: 0.0,
        }
    }
}

/// A builtin workload instance with its private state.
///
/// Nothing outside the instance can observe `frames`/`checksum` except
/// through the envelopes it emits.
#[derive(Debug, Clone)]
pub struct BuiltinSandbox {
    servant_id: String,
    manifest: std::sync::Arc<PackageManifest>,
    quota: ResourceQuota,
    model: BuiltinWorkloadModel,
    frames: u64,
    checksum: [u8; 32],
}

impl BuiltinSandbox {
    /// Fails for external workloads.
    pub fn new(
        servant_id: impl Into<String>,
        manifest: std::sync::Arc<PackageManifest>,
        quota: ResourceQuota,
    ) -> Option<Self> {
        let model = BuiltinWorkloadModel::from_spec(&manifest.workload)?;
        Some(BuiltinSandbox {
            servant_id: servant_id.into(),
            manifest,
            quota,
            model,
            frames: 0,
            checksum: [0; 32],
        })
    }

    pub fn servant_id(&self) -> &str {
        &self.servant_id
    }

    pub fn quota(&self) -> ResourceQuota {
        self.quota
    }

    pub fn model(&self) -> &BuiltinWorkloadModel {
        &self.model
    }

    pub fn manifest(&self) -> &PackageManifest {
        &self.manifest
    }

    pub fn frames_stored(&self) -> u64 {
        self.frames
    }

    fn stateful(&self) -> bool {
        self.manifest.workload.kind == WorkloadKind::BuiltinStateful
    }

    /// Processes one call or publish. Stateful workloads absorb the frame
    /// before the reply is synthesized.
    pub fn process(&mut self, env: &Envelope) -> Execution {
        let iface = &self.manifest.interface;
        let (request_schema, outputs): (SchemaRef, Vec<(Op, String, SchemaRef)>) = match env.op {
            Op::Call => match iface.rpc(&env.target) {
                Some(rpc) => (
                    rpc.request_schema,
                    vec![(Op::Response, rpc.name.clone(), rpc.response_schema)],
                ),
                None => return Execution::rejected(unknown_target(env)),
            },
            Op::Publish => match iface.topic(&env.target) {
                Some(t) if t.direction == crate::manifest::Direction::Inbound => (
                    t.schema,
                    iface
                        .outbound_topics()
                        .map(|o| (Op::Publish, o.name.clone(), o.schema))
                        .collect(),
                ),
                _ => return Execution::rejected(unknown_target(env)),
            },
            _ => {
                return Execution::rejected(Envelope::error(
                    env.id.clone(),
                    env.target.clone(),
                    codes::UNEXPECTED_OP,
                    format!("servants accept call and publish, not {:?}", env.op),
                ))
            }
        };

        let Some(payload) = env.payload.as_ref() else {
            return Execution::rejected(schema_error(env, "missing payload".into()));
        };
        if payload.schema != request_schema {
            return Execution::rejected(schema_error(
                env,
                format!("expected {request_schema}, got {}", payload.schema),
            ));
        }
        let raw = match crate::protocol::decompress_payload(payload) {
            Ok(raw) => raw,
            Err(e) => {
                return Execution::rejected(Envelope::error(
                    env.id.clone(),
                    env.target.clone(),
                    codes::CODEC,
                    e.to_string(),
                ))
            }
        };
        if let Err(e) = crate::schema::validate(request_schema, &raw) {
            return Execution::rejected(schema_error(env, e.to_string()));
        }

        let service_ms =
            self.model
                .service_time_ms(raw.len(), self.quota.cpu_millicores, self.frames);
        let digest = if self.stateful() {
            self.absorb(&raw);
            self.checksum
        } else {
            Sha256::digest(&raw).into()
        };
        let frames = self.frames;
        let replies = outputs
            .into_iter()
            .map(|(op, name, schema)| {
                let value = synthesize(schema, &digest, frames);
                let payload = Payload::from_value(&value, preferred_codec(schema));
                match op {
                    Op::Response => Envelope::response(env.id.clone(), name, payload),
                    _ => Envelope::publish(name, payload),
                }
            })
            .collect();
        Execution {
            replies,
            service_ms,
        }
    }

    fn absorb(&mut self, frame: &[u8]) {
        let mut h = Sha256::new();
        h.update(self.checksum);
        h.update(frame);
        self.checksum = h.finalize().into();
        self.frames += 1;
    }
}

fn unknown_target(env: &Envelope) -> Envelope {
    Envelope::error(
        env.id.clone(),
        env.target.clone(),
        codes::UNKNOWN_TARGET,
        format!("`{}` is not part of this interface", env.target),
    )
}

fn schema_error(env: &Envelope, detail: String) -> Envelope {
    Envelope::error(env.id.clone(), env.target.clone(), codes::SCHEMA, detail)
}

const LABELS: [&str; 5] = ["person", "chair", "bottle", "robot", "door"];

/// Deterministic result for `schema` derived from a 32-byte digest.
///
/// Stateless workloads pass the SHA-256 of the request encoding; stateful
/// ones pass their rolling checksum and frame count.
pub fn synthesize(schema: SchemaRef, digest: &[u8; 32], frames: u64) -> SchemaValue {
    match schema {
        SchemaRef::Blob => {
            let mut b = frames.to_be_bytes().to_vec();
            b.extend_from_slice(&digest[..8]);
            SchemaValue::Blob(b)
        }
        SchemaRef::Detections => {
            let n = 1 + digest[0] as usize % 3;
            SchemaValue::Detections(
                (0..n)
                    .map(|i| {
                        let o = 4 + 4 * i;
                        Detection {
                            label: LABELS[digest[1 + i] as usize % LABELS.len()].to_string(),
                            x: digest[o] as f32,
                            y: digest[o + 1] as f32,
                            w: 1.0 + digest[o + 2] as f32,
                            h: 1.0 + digest[o + 3] as f32,
                            score: digest[20 + i] as f32 / 255.0,
                        }
                    })
                    .collect(),
            )
        }
        SchemaRef::Pose => SchemaValue::Pose {
            x: u16::from_be_bytes([digest[0], digest[1]]) as f64 / 100.0,
            y: u16::from_be_bytes([digest[2], digest[3]]) as f64 / 100.0,
            theta: digest[4] as f64 / 64.0,
        },
        SchemaRef::GridMap => SchemaValue::GridMap {
            width: 8,
            height: 8,
            cells: digest.iter().chain(digest.iter()).copied().collect(),
        },
        SchemaRef::ImageRgb => SchemaValue::ImageRgb {
            width: 4,
            height: 4,
            pixels: digest.iter().chain(digest[..16].iter()).copied().collect(),
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::Compression;
    use crate::samples;
    use std::sync::Arc;

    fn detector_model(base: f64) -> BuiltinWorkloadModel {
        BuiltinWorkloadModel {
            base_work_millicore_ms: base,
            per_kb_work_millicore_ms: 0.0,
            state_growth_ms_per_frame: 0.0,
        }
    }

    #[test]
    fn service_time_formula() {
        let m = detector_model(200.0);
        assert_eq!(m.service_time_ms(0, 1000, 0), 200.0);
        assert_eq!(m.service_time_ms(0, 4000, 0), 50.0);
        let m = BuiltinWorkloadModel {
            base_work_millicore_ms: 100.0,
            per_kb_work_millicore_ms: 8.0,
            state_growth_ms_per_frame: 2.0,
        };
        // (100 + 8*2) * 1000/500 + 2*10
        assert_eq!(m.service_time_ms(2048, 500, 10), 252.0);
        assert_eq!(
            m.service_time_ms(0, 1000, 10) - m.service_time_ms(0, 1000, 0),
            20.0
        );
    }

    #[test]
    fn quota_monotone() {
        let m = BuiltinWorkloadModel {
            base_work_millicore_ms: 123.0,
            per_kb_work_millicore_ms: 4.5,
            state_growth_ms_per_frame: 1.0,
        };
        let mut last = f64::INFINITY;
        for cpu in (100..=64_000).step_by(100) {
            let t = m.service_time_ms(5000, cpu, 3);
            assert!(t <= last);
            last = t;
        }
    }

    fn image(seed: u8) -> Payload {
        let v = SchemaValue::ImageRgb {
            width: 2,
            height: 2,
            pixels: (0..12).map(|i| i * seed).collect(),
        };
        Payload::from_value(&v, Compression::Deflate)
    }

    fn grid(seed: u8) -> Payload {
        let v = SchemaValue::GridMap {
            width: 4,
            height: 4,
            cells: vec![seed; 16],
        };
        Payload::from_value(&v, Compression::Zlib)
    }

    fn detector_sandbox() -> BuiltinSandbox {
        BuiltinSandbox::new(
            "d",
            Arc::new(samples::detector()),
            ResourceQuota::new(1000, 256),
        )
        .unwrap()
    }

    fn mapper_sandbox() -> BuiltinSandbox {
        BuiltinSandbox::new(
            "m",
            Arc::new(samples::mapper()),
            ResourceQuota::new(1000, 512),
        )
        .unwrap()
    }

    #[test]
    fn detector_answers_detect() {
        let mut sb = detector_sandbox();
        let out = sb.process(&Envelope::call("7", "detect", image(3)));
        assert_eq!(out.replies.len(), 1);
        let r = &out.replies[0];
        assert_eq!(
            (r.op, r.id.as_str(), r.target.as_str()),
            (Op::Response, "7", "detect")
        );
        let payload = r.payload.as_ref().unwrap();
        assert_eq!(payload.schema, SchemaRef::Detections);
        assert!(matches!(payload.to_value().unwrap(), SchemaValue::Detections(d) if !d.is_empty()));
        // 48 byte image (8 header + 12 pixels = 20 bytes) at 2 per kb.
        let expected = (200.0 + 2.0 * 20.0 / 1024.0) * 1.0;
        assert!((out.service_ms - expected).abs() < 1e-9);
    }

    #[test]
    fn detector_result_independent_of_codec() {
        let mut sb = detector_sandbox();
        let v = image(5).to_value().unwrap();
        let a = sb.process(&Envelope::call(
            "1",
            "detect",
            Payload::from_value(&v, Compression::None),
        ));
        let b = sb.process(&Envelope::call(
            "1",
            "detect",
            Payload::from_value(&v, Compression::Zlib),
        ));
        assert_eq!(a, b);
    }

    #[test]
    fn mapper_counts_frames_and_grows() {
        let mut sb = mapper_sandbox();
        let first = sb.process(&Envelope::call("1", "update", grid(1)));
        for i in 2..=10 {
            sb.process(&Envelope::call(i.to_string(), "update", grid(i as u8)));
        }
        let eleventh = sb.process(&Envelope::call("11", "update", grid(1)));
        assert_eq!(sb.frames_stored(), 11);
        assert!((eleventh.service_ms - first.service_ms - 15.0).abs() < 1e-9);
        let SchemaValue::Blob(b) = eleventh.replies[0]
            .payload
            .as_ref()
            .unwrap()
            .to_value()
            .unwrap()
        else {
            panic!("mapper answers with a blob")
        };
        assert_eq!(u64::from_be_bytes(b[..8].try_into().unwrap()), 11);
    }

    #[test]
    fn inbound_publish_emits_outbound_topics() {
        let mut sb = mapper_sandbox();
        let out = sb.process(&Envelope::publish("scan", grid(2)));
        assert_eq!(out.replies.len(), 1);
        assert_eq!(out.replies[0].op, Op::Publish);
        assert_eq!(out.replies[0].target, "map_status");
        assert_eq!(sb.frames_stored(), 1);
    }

    #[test]
    fn rejects_bad_traffic() {
        let mut sb = mapper_sandbox();
        let code = |e: &Execution| e.replies[0].error_code().map(str::to_string);
        assert_eq!(
            code(&sb.process(&Envelope::call("1", "nope", grid(1)))).as_deref(),
            Some(codes::UNKNOWN_TARGET)
        );
        // Outbound topics cannot be published to.
        assert_eq!(
            code(&sb.process(&Envelope::publish("map_status", grid(1)))).as_deref(),
            Some(codes::UNKNOWN_TARGET)
        );
        assert_eq!(
            code(&sb.process(&Envelope::call("1", "update", image(1)))).as_deref(),
            Some(codes::SCHEMA)
        );
        let mut lying = grid(1);
        lying.compression = Compression::None;
        assert_eq!(
            code(&sb.process(&Envelope::call("1", "update", lying))).as_deref(),
            Some(codes::SCHEMA)
        );
        let mut corrupt = grid(1);
        corrupt.data = "!!!".into();
        assert_eq!(
            code(&sb.process(&Envelope::call("1", "update", corrupt))).as_deref(),
            Some(codes::CODEC)
        );
        assert_eq!(sb.frames_stored(), 0);
    }

    #[test]
    fn synthesis_is_schema_valid() {
        let digest: [u8; 32] = Sha256::digest(b"x").into();
        for s in SchemaRef::ALL {
            let v = synthesize(s, &digest, 3);
            assert_eq!(v.schema(), s);
            assert_eq!(SchemaValue::decode(s, &v.encode()).unwrap(), v);
        }
    }

    #[test]
    fn external_workloads_have_no_model() {
        let mut m = samples::detector();
        m.workload = WorkloadSpec {
            kind: WorkloadKind::ExternalProcess,
            params: [(
                "command".to_string(),
                crate::manifest::Scalar::Str("true".into()),
            )]
            .into(),
        };
        assert!(BuiltinSandbox::new("x", Arc::new(m), ResourceQuota::new(1000, 64)).is_none());
    }
}
