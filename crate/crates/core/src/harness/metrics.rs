use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::stub::{Action, RemoteTime, Winner};

#[derive(Debug, Error, Clone, Copy, PartialEq, Eq)]
#[error("no samples")]
pub struct EmptyInput;

/// Population standard deviation.
pub fn compute_sd(times: &[f64]) -> Result<f64, EmptyInput> {
    if times.is_empty() {
        return Err(EmptyInput);
    }
    let n = times.len() as f64;
    let mean = times.iter().sum::<f64>() / n;
    let var = times.iter().map(|t| (t - mean) * (t - mean)).sum::<f64>() / n;
    Ok(var.sqrt())
}

/// Nearest-rank percentile of an ascending slice.
pub fn percentile(sorted: &[f64], p: f64) -> Option<f64> {
    if sorted.is_empty() {
        return None;
    }
    let rank = ((p / 100.0) * sorted.len() as f64).ceil() as usize;
    Some(sorted[rank.clamp(1, sorted.len()) - 1])
}

/// One request of a scenario run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RequestRow {
    pub index: u64,
    /// `None` when the request never went to the cloud.
    pub t_remote: Option<RemoteTime>,
    /// Set when the local copy delivered the result.
    pub t_local_ms: Option<f64>,
    /// `None` when the request failed.
    pub winner: Option<Winner>,
    pub serving_ms: Option<f64>,
    pub q_after: Option<f64>,
    pub action: Action,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregates {
    pub requests: u64,
    pub completed: u64,
    pub failed: u64,
    pub remote_wins: u64,
    pub local_wins: u64,
    pub local_starts: u64,
    pub local_stops: u64,
    pub mean_ms: Option<f64>,
    pub sd_ms: Option<f64>,
    pub p50: Option<f64>,
    pub p95: Option<f64>,
    pub p99: Option<f64>,
    /// Over all requests; failures count as misses.
    pub fraction_within_t_max: f64,
}

impl Aggregates {
    pub fn compute(rows: &[RequestRow], t_max_ms: f64) -> Self {
        let mut served: Vec<f64> = rows.iter().filter_map(|r| r.serving_ms).collect();
        let within = served.iter().filter(|t| **t <= t_max_ms).count();
        let count = |w: Winner| rows.iter().filter(|r| r.winner == Some(w)).count() as u64;
        let actions = |a: Action| rows.iter().filter(|r| r.action == a).count() as u64;
        let mean = (!served.is_empty()).then(|| served.iter().sum::<f64>() / served.len() as f64);
        let sd = compute_sd(&served).ok();
        served.sort_by(f64::total_cmp);
        Aggregates {
            requests: rows.len() as u64,
            completed: served.len() as u64,
            failed: (rows.len() - served.len()) as u64,
            remote_wins: count(Winner::Remote),
            local_wins: count(Winner::Local),
            local_starts: actions(Action::StartLocal),
            local_stops: actions(Action::StopLocal),
            mean_ms: mean,
            sd_ms: sd,
            p50: percentile(&served, 50.0),
            p95: percentile(&served, 95.0),
            p99: percentile(&served, 99.0),
            fraction_within_t_max: if rows.is_empty() {
                0.0
            } else {
                within as f64 / rows.len() as f64
            },
        }
    }
}
