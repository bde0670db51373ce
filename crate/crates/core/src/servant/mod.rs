//! Servant hosting: isolated sandboxes that run package workloads.
//!
//! Builtin workloads realize their service time from the granted CPU quota
//! via [`BuiltinWorkloadModel`]; external workloads are child processes
//! speaking newline-delimited envelopes on stdin/stdout.

pub mod model;
pub mod runtime;

pub use model::{synthesize, BuiltinSandbox, BuiltinWorkloadModel, Execution};
pub use runtime::{start_sandbox, ReplySink, Sandbox, WorkloadLaunchError, HANDSHAKE_TIMEOUT};
