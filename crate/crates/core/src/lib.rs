//! Wrapping of robot-side packages as cloud services, the QoS-aware client
//! stub, the choreographer that places servants on nodes, and a
//! deterministic scenario harness.

pub mod canonical;
pub mod choreographer;
pub mod harness;
pub mod link;
pub mod manifest;
pub mod par;
pub mod portal;
pub mod protocol;
pub mod samples;
pub mod schema;
pub mod servant;
pub mod stub;
pub mod stubgen;
