#![allow(dead_code)]

/// Reference interpreter of the local restart policy, written from the
/// pseudocode: returns (q, action) after each completion time.
pub fn alg1(ts: &[f64], q_t: f64, t_desire: f64, t_max: f64, cap: f64) -> Vec<(f64, &'static str)> {
    let (mut q, mut running, mut out) = (q_t, false, Vec::new());
    for &t in ts {
        q = if t <= t_desire {
            (q + 2.0).min(cap)
        } else if t <= t_max {
            (q + 1.0).min(cap)
        } else {
            q / 2.0
        };
        let act = if q < q_t && !running {
            running = true;
            "start_local"
        } else if q > q_t && running {
            running = false;
            "stop_local"
        } else {
            ""
        };
        out.push((q, act));
    }
    out
}
