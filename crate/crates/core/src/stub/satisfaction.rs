//! The local-restart satisfaction state machine.
//!
//! Every settled remote request moves the satisfaction value `q`: +2 when it
//! met the desirable RRT, +1 when it was merely acceptable, halved otherwise.
//! Dropping strictly below the threshold starts the local copy; rising
//! strictly above stops it.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    None,
    StartLocal,
    StopLocal,
}

impl Action {
    pub fn as_str(self) -> &'static str {
        match self {
            Action::None => "",
            Action::StartLocal => "start_local",
            Action::StopLocal => "stop_local",
        }
    }
}

/// Remote completion time fed into the state machine.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RemoteTime {
    Completed(f64),
    /// Unanswered at `2 * t_max`; accounted as exactly `2 * t_max`.
    TimedOut,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SatisfactionState {
    pub q: f64,
    pub q_threshold: u32,
    pub t_desire_ms: u32,
    pub t_max_ms: u32,
    pub local_running: bool,
    pub q_cap: f64,
}

impl SatisfactionState {
    /// Starts at the threshold with the local copy stopped; `q` is capped at
    /// four times the threshold.
    pub fn new(q_threshold: u32, t_desire_ms: u32, t_max_ms: u32) -> Self {
        assert!(
            t_desire_ms <= t_max_ms,
            "t_desire_ms must not exceed t_max_ms"
        );
        SatisfactionState {
            q: q_threshold as f64,
            q_threshold,
            t_desire_ms,
            t_max_ms,
            local_running: false,
            q_cap: 4.0 * q_threshold as f64,
        }
    }

    pub fn with_cap(mut self, q_cap: f64) -> Self {
        self.q_cap = q_cap;
        self.q = self.q.min(q_cap);
        self
    }

    /// The completion time at which an unanswered request is given up.
    pub fn timeout_ms(&self) -> f64 {
        2.0 * self.t_max_ms as f64
    }

    pub fn marker_ms(&self, t: RemoteTime) -> f64 {
        match t {
            RemoteTime::Completed(ms) => ms,
            RemoteTime::TimedOut => self.timeout_ms(),
        }
    }

    /// One step of the state machine. The returned state's `local_running`
    /// already reflects the action.
    pub fn update(&self, t_current_ms: f64) -> (SatisfactionState, Action) {
        let q = if t_current_ms <= self.t_desire_ms as f64 {
            (self.q + 2.0).min(self.q_cap)
        } else if t_current_ms <= self.t_max_ms as f64 {
            (self.q + 1.0).min(self.q_cap)
        } else {
            self.q / 2.0
        };
        let threshold = self.q_threshold as f64;
        let action = if q < threshold && !self.local_running {
            Action::StartLocal
        } else if q > threshold && self.local_running {
            Action::StopLocal
        } else {
            Action::None
        };
        let local_running = match action {
            Action::StartLocal => true,
            Action::StopLocal => false,
            Action::None => self.local_running,
        };
        (
            SatisfactionState {
                q,
                local_running,
                ..*self
            },
            action,
        )
    }

    pub fn apply(&mut self, t: RemoteTime) -> Action {
        let (next, action) = self.update(self.marker_ms(t));
        *self = next;
        action
    }
}

/// Free-function form of [`SatisfactionState::update`].
pub fn update_satisfaction(
    s: &SatisfactionState,
    t_current_ms: f64,
) -> (SatisfactionState, Action) {
    s.update(t_current_ms)
}
