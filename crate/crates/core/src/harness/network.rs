use rand::Rng;

use super::scenario::NetworkSegment;

/// One-way delivery time of a `bytes`-sized frame over `seg`, or `None` when
/// the segment is down and the frame is dropped. Jitter is uniform in
/// `[-jitter_ms, +jitter_ms]` and consumes one draw only when non-zero; the
/// result never goes below zero.
pub fn inject_network<R: Rng + ?Sized>(
    seg: &NetworkSegment,
    bytes: u64,
    rng: &mut R,
) -> Option<f64> {
    if !seg.up {
        return None;
    }
    let jitter = if seg.jitter_ms > 0.0 {
        rng.random_range(-seg.jitter_ms..=seg.jitter_ms)
    } else {
        0.0
    };
    let transfer = bytes as f64 * 8.0 / seg.bandwidth_kbps;
    Some((seg.base_latency_ms + jitter + transfer).max(0.0))
}
