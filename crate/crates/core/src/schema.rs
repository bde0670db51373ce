//! Built-in message schemas and their canonical binary encodings.
//!
//! Every payload carried on the wire is the canonical encoding of one of
//! these schemas. All integers and floats are big-endian.
//!
//! | schema       | layout                                                        |
//! |--------------|---------------------------------------------------------------|
//! | `blob`       | raw bytes                                                     |
//! | `image_rgb`  | `u32 width, u32 height, width*height*3 pixel bytes`           |
//! | `grid_map`   | `u32 width, u32 height, width*height cell bytes`              |
//! | `pose`       | `f64 x, f64 y, f64 theta`                                     |
//! | `detections` | `u32 n`, then n × (`u16 len, label utf8, f32 x,y,w,h,score`)  |

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchemaRef {
    Blob,
    ImageRgb,
    GridMap,
    Pose,
    Detections,
}

impl SchemaRef {
    pub const ALL: [SchemaRef; 5] = [
        SchemaRef::Blob,
        SchemaRef::ImageRgb,
        SchemaRef::GridMap,
        SchemaRef::Pose,
        SchemaRef::Detections,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SchemaRef::Blob => "blob",
            SchemaRef::ImageRgb => "image_rgb",
            SchemaRef::GridMap => "grid_map",
            SchemaRef::Pose => "pose",
            SchemaRef::Detections => "detections",
        }
    }
}

impl fmt::Display for SchemaRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SchemaRef {
    type Err = SchemaError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        SchemaRef::ALL
            .into_iter()
            .find(|r| r.as_str() == s)
            .ok_or_else(|| SchemaError::Unknown(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SchemaError {
    #[error("unknown schema `{0}`")]
    Unknown(String),
    #[error("{schema}: {detail}")]
    Malformed { schema: SchemaRef, detail: String },
}

fn malformed(schema: SchemaRef, detail: impl Into<String>) -> SchemaError {
    SchemaError::Malformed {
        schema,
        detail: detail.into(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub label: String,
    pub x: f32,
    pub y: f32,
    pub w: f32,
    pub h: f32,
    pub score: f32,
}

/// A decoded message instance.
#[derive(Debug, Clone, PartialEq)]
pub enum SchemaValue {
    Blob(Vec<u8>),
    ImageRgb {
        width: u32,
        height: u32,
        pixels: Vec<u8>,
    },
    GridMap {
        width: u32,
        height: u32,
        cells: Vec<u8>,
    },
    Pose {
        x: f64,
        y: f64,
        theta: f64,
    },
    Detections(Vec<Detection>),
}

impl SchemaValue {
    pub fn schema(&self) -> SchemaRef {
        match self {
            SchemaValue::Blob(_) => SchemaRef::Blob,
            SchemaValue::ImageRgb { .. } => SchemaRef::ImageRgb,
            SchemaValue::GridMap { .. } => SchemaRef::GridMap,
            SchemaValue::Pose { .. } => SchemaRef::Pose,
            SchemaValue::Detections(_) => SchemaRef::Detections,
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        match self {
            SchemaValue::Blob(b) => b.clone(),
            SchemaValue::ImageRgb {
                width,
                height,
                pixels,
            } => raster(*width, *height, pixels),
            SchemaValue::GridMap {
                width,
                height,
                cells,
            } => raster(*width, *height, cells),
            SchemaValue::Pose { x, y, theta } => {
                let mut out = Vec::with_capacity(24);
                for v in [x, y, theta] {
                    out.extend_from_slice(&v.to_be_bytes());
                }
                out
            }
            SchemaValue::Detections(list) => {
                let mut out = Vec::new();
                out.extend_from_slice(&(list.len() as u32).to_be_bytes());
                for d in list {
                    let label = d.label.as_bytes();
                    out.extend_from_slice(&(label.len() as u16).to_be_bytes());
                    out.extend_from_slice(label);
                    for v in [d.x, d.y, d.w, d.h, d.score] {
                        out.extend_from_slice(&v.to_be_bytes());
                    }
                }
                out
            }
        }
    }

    pub fn decode(schema: SchemaRef, bytes: &[u8]) -> Result<SchemaValue, SchemaError> {
        match schema {
            SchemaRef::Blob => Ok(SchemaValue::Blob(bytes.to_vec())),
            SchemaRef::ImageRgb => {
                let (width, height, body) = split_raster(schema, bytes, 3)?;
                Ok(SchemaValue::ImageRgb {
                    width,
                    height,
                    pixels: body.to_vec(),
                })
            }
            SchemaRef::GridMap => {
                let (width, height, body) = split_raster(schema, bytes, 1)?;
                Ok(SchemaValue::GridMap {
                    width,
                    height,
                    cells: body.to_vec(),
                })
            }
            SchemaRef::Pose => {
                if bytes.len() != 24 {
                    return Err(malformed(
                        schema,
                        format!("expected 24 bytes, got {}", bytes.len()),
                    ));
                }
                let f = |i: usize| f64::from_be_bytes(bytes[i * 8..i * 8 + 8].try_into().unwrap());
                Ok(SchemaValue::Pose {
                    x: f(0),
                    y: f(1),
                    theta: f(2),
                })
            }
            SchemaRef::Detections => decode_detections(bytes).map(SchemaValue::Detections),
        }
    }
}

/// Checks that `bytes` is a canonical encoding under `schema`.
pub fn validate(schema: SchemaRef, bytes: &[u8]) -> Result<(), SchemaError> {
    SchemaValue::decode(schema, bytes).map(|_| ())
}

fn raster(width: u32, height: u32, body: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + body.len());
    out.extend_from_slice(&width.to_be_bytes());
    out.extend_from_slice(&height.to_be_bytes());
    out.extend_from_slice(body);
    out
}

fn split_raster(
    schema: SchemaRef,
    bytes: &[u8],
    channels: u64,
) -> Result<(u32, u32, &[u8]), SchemaError> {
    if bytes.len() < 8 {
        return Err(malformed(schema, "missing width/height header"));
    }
    let width = u32::from_be_bytes(bytes[0..4].try_into().unwrap());
    let height = u32::from_be_bytes(bytes[4..8].try_into().unwrap());
    let expected = width as u64 * height as u64 * channels;
    let body = &bytes[8..];
    if body.len() as u64 != expected {
        return Err(malformed(
            schema,
            format!(
                "{width}x{height} needs {expected} body bytes, got {}",
                body.len()
            ),
        ));
    }
    Ok((width, height, body))
}

fn decode_detections(bytes: &[u8]) -> Result<Vec<Detection>, SchemaError> {
    let schema = SchemaRef::Detections;
    let mut cur = Cursor { bytes, pos: 0 };
    let n = cur
        .take(4)
        .map(|b| u32::from_be_bytes(b.try_into().unwrap()))
        .ok_or_else(|| malformed(schema, "missing count"))?;
    let mut out = Vec::new();
    for i in 0..n {
        let truncated = || malformed(schema, format!("entry {i} truncated"));
        let len = cur.take(2).ok_or_else(truncated)?;
        let len = u16::from_be_bytes(len.try_into().unwrap()) as usize;
        let label = cur.take(len).ok_or_else(truncated)?;
        let label = std::str::from_utf8(label)
            .map_err(|_| malformed(schema, format!("entry {i} label is not UTF-8")))?
            .to_string();
        let mut f = [0f32; 5];
        for slot in f.iter_mut() {
            let raw = cur.take(4).ok_or_else(truncated)?;
            *slot = f32::from_be_bytes(raw.try_into().unwrap());
        }
        out.push(Detection {
            label,
            x: f[0],
            y: f[1],
            w: f[2],
            h: f[3],
            score: f[4],
        });
    }
    if cur.pos != bytes.len() {
        return Err(malformed(schema, "trailing bytes"));
    }
    Ok(out)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let end = self.pos.checked_add(n)?;
        let slice = self.bytes.get(self.pos..end)?;
        self.pos = end;
        Some(slice)
    }
}
