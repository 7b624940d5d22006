//! Time sources shared by rings, devices and executors.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Instant;

/// Nanosecond timestamps, either driven by the simulator or read from the
/// monotonic wall clock.
#[derive(Clone, Debug)]
pub enum ClockSource {
    /// Virtual time set by a discrete-event driver.
    Virtual(Arc<AtomicU64>),
    /// Elapsed wall-clock time since `Instant`.
    Wall(Instant),
}

impl ClockSource {
    pub fn virtual_clock() -> Self {
        ClockSource::Virtual(Arc::new(AtomicU64::new(0)))
    }

    pub fn wall() -> Self {
        ClockSource::Wall(Instant::now())
    }

    #[inline]
    pub fn now_ns(&self) -> u64 {
        match self {
            ClockSource::Virtual(t) => t.load(Ordering::Acquire),
            ClockSource::Wall(start) => start.elapsed().as_nanos() as u64,
        }
    }

    /// Moves a virtual clock forward. Panics if time would go backwards.
    pub fn set(&self, now: u64) {
        match self {
            ClockSource::Virtual(t) => {
                let prev = t.swap(now, Ordering::AcqRel);
                assert!(prev <= now, "virtual time went backwards: {prev} -> {now}");
            }
            ClockSource::Wall(_) => panic!("cannot set a wall clock"),
        }
    }

    pub fn is_virtual(&self) -> bool {
        matches!(self, ClockSource::Virtual(_))
    }
}

impl Default for ClockSource {
    fn default() -> Self {
        ClockSource::virtual_clock()
    }
}
