//! The JSON wire protocol spoken between stubs, the portal and servants.
//!
//! One [`Envelope`] per text frame, canonical JSON (sorted keys, no
//! whitespace). Binary payloads travel as standard base64 with padding,
//! optionally compressed with raw DEFLATE or zlib.

use std::fmt;
use std::io::{Read, Write};

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine as _;
use flate2::read::{DeflateDecoder, ZlibDecoder};
use flate2::write::{DeflateEncoder, ZlibEncoder};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::canonical;
use crate::manifest::ResourceQuota;
use crate::schema::{SchemaError, SchemaRef, SchemaValue};

/// Upper bound on a decompressed payload, guarding against zip bombs.
pub const MAX_PAYLOAD_BYTES: usize = 64 << 20;

/// Keepalive ping period.
pub const KEEPALIVE_INTERVAL_MS: u64 = 2_000;
/// Consecutive unanswered pings after which a link is considered down.
pub const KEEPALIVE_MISSES: u32 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Op {
    RequestService,
    ServiceGranted,
    Publish,
    Call,
    Response,
    Error,
    Ping,
    Pong,
}

#[derive(
    Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, Default,
)]
#[serde(rename_all = "snake_case")]
pub enum Compression {
    #[default]
    None,
    Deflate,
    Zlib,
}

impl fmt::Display for Compression {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Compression::None => "none",
            Compression::Deflate => "deflate",
            Compression::Zlib => "zlib",
        })
    }
}

/// Error codes carried in `status.code`.
pub mod codes {
    pub const MALFORMED: &str = "malformed";
    pub const INVARIANT: &str = "invariant";
    pub const UNKNOWN_SERVICE: &str = "unknown_service";
    pub const INSUFFICIENT_RESOURCES: &str = "insufficient_resources";
    pub const NO_GRANT: &str = "no_grant";
    pub const UNKNOWN_TARGET: &str = "unknown_target";
    pub const SCHEMA: &str = "schema";
    pub const CODEC: &str = "codec";
    pub const TERMINATING: &str = "terminating";
    pub const UNEXPECTED_OP: &str = "unexpected_op";
    pub const WORKLOAD: &str = "workload";
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Payload {
    pub compression: Compression,
    pub data: String,
    pub schema: SchemaRef,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SlaTimes {
    pub t_desire_ms: u32,
    pub t_max_ms: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct SlaDeclaration {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resources: Option<ResourceQuota>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub times: Option<SlaTimes>,
}

impl SlaDeclaration {
    pub fn times(t_desire_ms: u32, t_max_ms: u32) -> Self {
        SlaDeclaration {
            resources: None,
            times: Some(SlaTimes {
                t_desire_ms,
                t_max_ms,
            }),
        }
    }

    pub fn resources(quota: ResourceQuota) -> Self {
        SlaDeclaration {
            resources: Some(quota),
            times: None,
        }
    }

    pub fn check(&self) -> Result<(), String> {
        match (&self.times, &self.resources) {
            (Some(_), Some(_)) => Err("sla carries both times and resources".into()),
            (None, None) => Err("sla carries neither times nor resources".into()),
            (Some(t), None) => {
                if t.t_desire_ms == 0 || t.t_max_ms == 0 {
                    Err("sla times must be positive".into())
                } else if t.t_desire_ms > t.t_max_ms {
                    Err("t_desire_ms exceeds t_max_ms".into())
                } else {
                    Ok(())
                }
            }
            (None, Some(q)) => q.validate("sla.resources").map_err(|e| e.to_string()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Status {
    pub code: String,
    pub detail: String,
}

/// One protocol message. `id` and `target` are always present on the wire,
/// empty when they carry nothing.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Envelope {
    #[serde(default)]
    pub id: String,
    pub op: Op,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub payload: Option<Payload>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub servant_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sla: Option<SlaDeclaration>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub status: Option<Status>,
    #[serde(default)]
    pub target: String,
}

impl Envelope {
    fn bare(op: Op) -> Self {
        Envelope {
            id: String::new(),
            op,
            payload: None,
            servant_id: None,
            sla: None,
            status: None,
            target: String::new(),
        }
    }

    pub fn ping() -> Self {
        Self::bare(Op::Ping)
    }

    pub fn pong() -> Self {
        Self::bare(Op::Pong)
    }

    pub fn request_service(
        id: impl Into<String>,
        service: impl Into<String>,
        sla: SlaDeclaration,
    ) -> Self {
        Envelope {
            id: id.into(),
            target: service.into(),
            sla: Some(sla),
            ..Self::bare(Op::RequestService)
        }
    }

    pub fn granted(
        id: impl Into<String>,
        service: impl Into<String>,
        servant_id: impl Into<String>,
    ) -> Self {
        Envelope {
            id: id.into(),
            target: service.into(),
            servant_id: Some(servant_id.into()),
            ..Self::bare(Op::ServiceGranted)
        }
    }

    pub fn call(id: impl Into<String>, target: impl Into<String>, payload: Payload) -> Self {
        Envelope {
            id: id.into(),
            target: target.into(),
            payload: Some(payload),
            ..Self::bare(Op::Call)
        }
    }

    pub fn publish(target: impl Into<String>, payload: Payload) -> Self {
        Envelope {
            target: target.into(),
            payload: Some(payload),
            ..Self::bare(Op::Publish)
        }
    }

    pub fn response(id: impl Into<String>, target: impl Into<String>, payload: Payload) -> Self {
        Envelope {
            id: id.into(),
            target: target.into(),
            payload: Some(payload),
            ..Self::bare(Op::Response)
        }
    }

    pub fn error(
        id: impl Into<String>,
        target: impl Into<String>,
        code: &str,
        detail: impl Into<String>,
    ) -> Self {
        Envelope {
            id: id.into(),
            target: target.into(),
            status: Some(Status {
                code: code.to_string(),
                detail: detail.into(),
            }),
            ..Self::bare(Op::Error)
        }
    }

    pub fn error_code(&self) -> Option<&str> {
        self.status.as_ref().map(|s| s.code.as_str())
    }

    /// Checks the per-message invariants.
    pub fn check(&self) -> Result<(), String> {
        if self.sla.is_some() && self.op != Op::RequestService {
            return Err("sla is only allowed on request_service".into());
        }
        if self.status.is_some() != (self.op == Op::Error) {
            return Err("status is required on error and forbidden elsewhere".into());
        }
        if self.servant_id.is_some() != (self.op == Op::ServiceGranted) {
            return Err("servant_id is required on service_granted and forbidden elsewhere".into());
        }
        match self.op {
            Op::Call => {
                if self.id.is_empty() {
                    return Err("call requires a non-empty id".into());
                }
                if self.target.is_empty() {
                    return Err("call requires an rpc target".into());
                }
                if self.payload.is_none() {
                    return Err("call requires a payload".into());
                }
            }
            Op::Publish => {
                if self.target.is_empty() || self.payload.is_none() {
                    return Err("publish requires a topic target and a payload".into());
                }
            }
            Op::Response => {
                if self.id.is_empty() || self.payload.is_none() {
                    return Err("response requires an id and a payload".into());
                }
            }
            Op::RequestService => {
                if self.target.is_empty() {
                    return Err("request_service requires a service target".into());
                }
                match &self.sla {
                    Some(sla) => sla.check()?,
                    None => return Err("request_service requires an sla".into()),
                }
            }
            Op::ServiceGranted => {
                if self.target.is_empty() {
                    return Err("service_granted requires a service target".into());
                }
            }
            Op::Error | Op::Ping | Op::Pong => {}
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProtocolError {
    #[error("malformed frame: {0}")]
    Malformed(String),
    #[error("invariant violated: {0}")]
    Invariant(String),
}

impl ProtocolError {
    pub fn code(&self) -> &'static str {
        match self {
            ProtocolError::Malformed(_) => codes::MALFORMED,
            ProtocolError::Invariant(_) => codes::INVARIANT,
        }
    }

    /// The error envelope a peer should receive for this failure.
    pub fn to_envelope(&self) -> Envelope {
        Envelope::error("", "", self.code(), self.to_string())
    }
}

pub fn encode(e: &Envelope) -> Vec<u8> {
    canonical::to_canonical_vec(e)
}

pub fn encode_string(e: &Envelope) -> String {
    canonical::to_canonical_string(e)
}

pub fn decode(raw: &[u8]) -> Result<Envelope, ProtocolError> {
    let text = std::str::from_utf8(raw).map_err(|e| ProtocolError::Malformed(e.to_string()))?;
    let envelope: Envelope =
        serde_json::from_str(text).map_err(|e| ProtocolError::Malformed(e.to_string()))?;
    envelope.check().map_err(ProtocolError::Invariant)?;
    Ok(envelope)
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CodecError {
    #[error("codec `{0}` unavailable")]
    Unavailable(String),
    #[error("corrupt payload: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Schema(#[from] SchemaError),
}

/// Compresses a canonical schema encoding into a wire payload.
pub fn compress_payload(
    schema: SchemaRef,
    bytes: &[u8],
    codec: Compression,
) -> Result<Payload, CodecError> {
    crate::schema::validate(schema, bytes)?;
    let packed = match codec {
        Compression::None => bytes.to_vec(),
        Compression::Deflate => {
            let mut enc = DeflateEncoder::new(Vec::new(), flate2::Compression::default());
            enc.write_all(bytes)
                .and_then(|_| enc.finish())
                .map_err(|e| CodecError::Corrupt(e.to_string()))?
        }
        Compression::Zlib => {
            let mut enc = ZlibEncoder::new(Vec::new(), flate2::Compression::default());
            enc.write_all(bytes)
                .and_then(|_| enc.finish())
                .map_err(|e| CodecError::Corrupt(e.to_string()))?
        }
    };
    Ok(Payload {
        compression: codec,
        data: BASE64.encode(packed),
        schema,
    })
}

/// Recovers the canonical schema encoding carried by `p`.
pub fn decompress_payload(p: &Payload) -> Result<Vec<u8>, CodecError> {
    let packed = BASE64
        .decode(p.data.as_bytes())
        .map_err(|e| CodecError::Corrupt(format!("base64: {e}")))?;
    match p.compression {
        Compression::None => Ok(packed),
        Compression::Deflate => inflate(DeflateDecoder::new(packed.as_slice())),
        Compression::Zlib => inflate(ZlibDecoder::new(packed.as_slice())),
    }
}

fn inflate<R: Read>(reader: R) -> Result<Vec<u8>, CodecError> {
    let mut out = Vec::new();
    reader
        .take(MAX_PAYLOAD_BYTES as u64 + 1)
        .read_to_end(&mut out)
        .map_err(|e| CodecError::Corrupt(e.to_string()))?;
    if out.len() > MAX_PAYLOAD_BYTES {
        return Err(CodecError::Corrupt("payload exceeds size limit".into()));
    }
    Ok(out)
}

/// Codec used for a schema unless a stub descriptor says otherwise: zlib
/// for grid maps, raw deflate for images, nothing for the rest.
pub fn preferred_codec(schema: SchemaRef) -> Compression {
    match schema {
        SchemaRef::GridMap => Compression::Zlib,
        SchemaRef::ImageRgb => Compression::Deflate,
        _ => Compression::None,
    }
}

/// `1 - compressed_len / original_len`; zero for empty inputs.
pub fn compression_ratio(original_len: usize, compressed_len: usize) -> f64 {
    if original_len == 0 {
        0.0
    } else {
        1.0 - compressed_len as f64 / original_len as f64
    }
}

impl Payload {
    /// Builds a payload from a schema value.
    pub fn from_value(value: &SchemaValue, codec: Compression) -> Payload {
        compress_payload(value.schema(), &value.encode(), codec)
            .expect("encodings of schema values are always canonical")
    }

    /// Number of bytes carried after base64 decoding.
    pub fn wire_len(&self) -> usize {
        BASE64
            .decode(self.data.as_bytes())
            .map(|b| b.len())
            .unwrap_or(0)
    }

    /// Decompresses and parses under the declared schema.
    pub fn to_value(&self) -> Result<SchemaValue, CodecError> {
        let raw = decompress_payload(self)?;
        Ok(SchemaValue::decode(self.schema, &raw)?)
    }
}
