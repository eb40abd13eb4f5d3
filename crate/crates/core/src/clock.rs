//! Millisecond clock on top of `tokio::time`.
//!
//! Under a paused tokio runtime every reading is virtual, which is what the
//! scenario harness relies on for exact timestamps.

use std::time::{Duration, SystemTime, UNIX_EPOCH};

use tokio::time::Instant;

#[derive(Debug, Clone, Copy)]
pub struct Clock {
    origin: Instant,
    epoch_ms: u64,
}

impl Clock {
    /// Clock whose wall-clock readings start at the current system time.
    pub fn system() -> Self {
        let epoch_ms = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_millis() as u64)
            .unwrap_or(0);
        Self::with_epoch(epoch_ms)
    }

    /// Clock whose wall-clock reading at creation is `epoch_ms`.
    pub fn with_epoch(epoch_ms: u64) -> Self {
        Clock {
            origin: Instant::now(),
            epoch_ms,
        }
    }

    /// Monotonic milliseconds since the clock was created.
    pub fn elapsed_ms(&self) -> u64 {
        self.origin.elapsed().as_millis() as u64
    }

    /// Wall-clock milliseconds since the Unix epoch.
    pub fn now_ms(&self) -> u64 {
        self.epoch_ms + self.elapsed_ms()
    }

    pub fn instant_at(&self, elapsed_ms: u64) -> Instant {
        self.origin + Duration::from_millis(elapsed_ms)
    }
}
