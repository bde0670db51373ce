//! Routing decisions of the client stub, independent of any clock or
//! transport. The async [`Stub`](super::Stub) and the virtual-time harness
//! both drive this type, so their behavior cannot drift apart.

use serde::{Deserialize, Serialize};

use super::keepalive::LinkStatus;
use super::satisfaction::{Action, RemoteTime, SatisfactionState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Every request goes to the cloud, raced against the local copy while
    /// it runs.
    Normal,
    /// Link down with a fallback: requests run locally only.
    Failover,
    /// Link down without a fallback: requests fail.
    Unavailable,
}

/// Where one request is sent.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Plan {
    pub remote: bool,
    pub local: bool,
}

/// Reaction to a link status change.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FailoverAction {
    None,
    /// Start the local copy and route everything to it.
    EnterFailover,
    /// Link lost and nothing to fall back to.
    Unavailable,
    /// Link back. Stateful services must obtain a fresh grant before the
    /// next routed call; `stop_local` says whether the local copy is no
    /// longer wanted.
    Resume {
        regrant: bool,
        stop_local: bool,
    },
}

#[derive(Debug, Clone)]
pub struct StubPolicy {
    satisfaction: SatisfactionState,
    stateful: bool,
    has_fallback: bool,
    mode: Mode,
}

impl StubPolicy {
    pub fn new(satisfaction: SatisfactionState, stateful: bool, has_fallback: bool) -> Self {
        StubPolicy {
            satisfaction,
            stateful,
            has_fallback,
            mode: Mode::Normal,
        }
    }

    pub fn satisfaction(&self) -> &SatisfactionState {
        &self.satisfaction
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn has_fallback(&self) -> bool {
        self.has_fallback
    }

    pub fn stateful(&self) -> bool {
        self.stateful
    }

    pub fn plan(&self) -> Plan {
        match self.mode {
            Mode::Normal => Plan {
                remote: true,
                local: self.has_fallback && !self.stateful && self.satisfaction.local_running,
            },
            Mode::Failover => Plan {
                remote: false,
                local: true,
            },
            Mode::Unavailable => Plan {
                remote: false,
                local: false,
            },
        }
    }

    /// Feeds one settled remote request into the state machine. Stateful
    /// services keep tracking `q` but never act on it.
    pub fn on_remote_settled(&mut self, t: RemoteTime) -> Action {
        let before = self.satisfaction.local_running;
        let action = self.satisfaction.apply(t);
        if self.stateful || !self.has_fallback {
            self.satisfaction.local_running = before;
            return Action::None;
        }
        action
    }

    pub fn on_link(&mut self, link: LinkStatus) -> FailoverAction {
        match (self.mode, link) {
            (Mode::Normal, LinkStatus::Down) => {
                if self.has_fallback {
                    self.mode = Mode::Failover;
                    FailoverAction::EnterFailover
                } else {
                    self.mode = Mode::Unavailable;
                    FailoverAction::Unavailable
                }
            }
            (Mode::Failover, LinkStatus::Up) => {
                self.mode = Mode::Normal;
                let keep = !self.stateful && self.satisfaction.local_running;
                FailoverAction::Resume {
                    regrant: self.stateful,
                    stop_local: !keep,
                }
            }
            (Mode::Unavailable, LinkStatus::Up) => {
                self.mode = Mode::Normal;
                FailoverAction::Resume {
                    regrant: self.stateful,
                    stop_local: false,
                }
            }
            _ => FailoverAction::None,
        }
    }
}
