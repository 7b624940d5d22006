//! Logical thread identity used by ring instrumentation.
//!
//! Real threads get a distinct tag on first use. The virtual-time executor
//! runs many logical threads on one OS thread and switches the tag before
//! stepping each of them, so ring ownership checks see logical threads.

use std::cell::Cell;
use std::sync::atomic::{AtomicU32, Ordering};

/// Tags at or above this value are handed out automatically.
const AUTO_BASE: u32 = 1 << 24;

static NEXT: AtomicU32 = AtomicU32::new(AUTO_BASE);

thread_local! {
    static TAG: Cell<u32> = const { Cell::new(0) };
}

/// Tag of the calling logical thread.
#[inline]
pub fn current() -> u32 {
    TAG.with(|t| {
        let v = t.get();
        if v != 0 {
            return v;
        }
        let fresh = NEXT.fetch_add(1, Ordering::Relaxed);
        t.set(fresh);
        fresh
    })
}

/// Overrides the tag of the calling OS thread. `0` resets it.
#[inline]
pub fn set(tag: u32) {
    TAG.with(|t| t.set(tag));
}
