use serde::{Deserialize, Serialize};

use crate::protocol::{KEEPALIVE_INTERVAL_MS, KEEPALIVE_MISSES};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LinkStatus {
    Up,
    Down,
}

/// Ping/pong down-detector. Drive it with [`tick`](Self::tick) once per
/// interval and [`pong`](Self::pong) whenever a pong arrives; a ping still
/// unanswered at the next tick counts as missed, and `max_misses`
/// consecutive misses mark the link down until the next pong.
#[derive(Debug, Clone)]
pub struct KeepaliveDetector {
    pub interval_ms: u64,
    pub max_misses: u32,
    awaiting: bool,
    misses: u32,
    status: LinkStatus,
}

impl Default for KeepaliveDetector {
    fn default() -> Self {
        Self::new(KEEPALIVE_INTERVAL_MS, KEEPALIVE_MISSES)
    }
}

impl KeepaliveDetector {
    pub fn new(interval_ms: u64, max_misses: u32) -> Self {
        KeepaliveDetector {
            interval_ms,
            max_misses: max_misses.max(1),
            awaiting: false,
            misses: 0,
            status: LinkStatus::Up,
        }
    }

    /// Accounts for the previous ping and returns the status; the caller
    /// then sends a fresh ping.
    pub fn tick(&mut self) -> LinkStatus {
        if self.awaiting {
            self.misses += 1;
            if self.misses >= self.max_misses {
                self.status = LinkStatus::Down;
            }
        }
        self.awaiting = true;
        self.status
    }

    pub fn pong(&mut self) {
        self.awaiting = false;
        self.misses = 0;
        self.status = LinkStatus::Up;
    }

    pub fn status(&self) -> LinkStatus {
        self.status
    }

    pub fn misses(&self) -> u32 {
        self.misses
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn three_misses_mark_down() {
        let mut k = KeepaliveDetector::default();
        assert_eq!(k.tick(), LinkStatus::Up); // first ping out
        assert_eq!(k.tick(), LinkStatus::Up); // miss 1
        assert_eq!(k.tick(), LinkStatus::Up); // miss 2
        assert_eq!(k.tick(), LinkStatus::Down); // miss 3
        assert_eq!(k.misses(), 3);
        k.pong();
        assert_eq!(k.status(), LinkStatus::Up);
        assert_eq!(k.tick(), LinkStatus::Up);
    }

    #[test]
    fn answered_pings_never_miss() {
        let mut k = KeepaliveDetector::default();
        for _ in 0..100 {
            assert_eq!(k.tick(), LinkStatus::Up);
            k.pong();
        }
    }

    #[test]
    fn one_pong_resets_count() {
        let mut k = KeepaliveDetector::new(10, 3);
        k.tick();
        k.tick();
        k.tick();
        k.pong();
        k.tick();
        k.tick();
        k.tick();
        assert_eq!(k.status(), LinkStatus::Up);
    }
}
