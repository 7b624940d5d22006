//! Bounded single-producer/single-consumer ring.
//!
//! `head` and `tail` are free-running 64-bit counters; the slot index is
//! `counter & mask`. The producer owns `tail`, the consumer owns `head`, and
//! each side caches the other's counter so the shared cache line is only
//! touched when the cached value says the ring looks full (or empty).

use std::cell::UnsafeCell;
use std::fmt;
use std::mem::MaybeUninit;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use crossbeam_utils::CachePadded;

use super::thread_tag;

struct Shared<T> {
    head: CachePadded<AtomicU64>,
    tail: CachePadded<AtomicU64>,
    mask: u64,
    slots: Box<[UnsafeCell<MaybeUninit<T>>]>,
}

// SAFETY: a slot is written only by the producer before publishing `tail`
// (release) and read only by the consumer after observing it (acquire), and
// vice versa for `head`. The handles below are not `Clone`, so there is at
// most one producer and one consumer.
unsafe impl<T: Send> Send for Shared<T> {}
unsafe impl<T: Send> Sync for Shared<T> {}

impl<T> Shared<T> {
    #[inline]
    fn capacity(&self) -> u64 {
        self.mask + 1
    }

    #[inline]
    fn len(&self) -> u64 {
        let head = self.head.load(Ordering::Acquire);
        let tail = self.tail.load(Ordering::Acquire);
        tail.wrapping_sub(head).min(self.capacity())
    }

    #[inline]
    unsafe fn slot(&self, pos: u64) -> *mut MaybeUninit<T> {
        self.slots[(pos & self.mask) as usize].get()
    }
}

impl<T> Drop for Shared<T> {
    fn drop(&mut self) {
        let head = *self.head.get_mut();
        let tail = *self.tail.get_mut();
        for pos in head..tail {
            // SAFETY: slots in [head, tail) hold initialized values and we have
            // exclusive access during drop.
            unsafe { (*self.slot(pos)).assume_init_drop() };
        }
    }
}

/// Creates a ring with `capacity` slots. `capacity` must be a power of two.
pub fn ring<T>(capacity: usize) -> (Producer<T>, Consumer<T>) {
    assert!(
        capacity.is_power_of_two(),
        "ring capacity must be a power of two, got {capacity}"
    );
    let slots = (0..capacity)
        .map(|_| UnsafeCell::new(MaybeUninit::uninit()))
        .collect::<Vec<_>>()
        .into_boxed_slice();
    let shared = Arc::new(Shared {
        head: CachePadded::new(AtomicU64::new(0)),
        tail: CachePadded::new(AtomicU64::new(0)),
        mask: capacity as u64 - 1,
        slots,
    });
    (
        Producer {
            shared: shared.clone(),
            tail: 0,
            cached_head: 0,
            owner: OwnerLog::default(),
        },
        Consumer {
            shared,
            head: 0,
            cached_tail: 0,
            owner: OwnerLog::default(),
        },
    )
}

/// Records which logical thread touches one side of a ring.
#[derive(Debug, Default, Clone, Copy)]
struct OwnerLog {
    owner: Option<u32>,
    changes: u64,
}

impl OwnerLog {
    #[inline]
    fn touch(&mut self) {
        let me = thread_tag::current();
        match self.owner {
            Some(o) if o == me => {}
            Some(_) => {
                self.owner = Some(me);
                self.changes += 1;
            }
            None => self.owner = Some(me),
        }
    }
}

/// Write side of a [`ring`].
pub struct Producer<T> {
    shared: Arc<Shared<T>>,
    tail: u64,
    cached_head: u64,
    owner: OwnerLog,
}

impl<T> Producer<T> {
    pub fn capacity(&self) -> usize {
        self.shared.capacity() as usize
    }

    /// Free slots as seen by the producer (refreshes the cached head).
    pub fn free(&mut self) -> usize {
        self.cached_head = self.shared.head.load(Ordering::Acquire);
        (self.shared.capacity() - (self.tail - self.cached_head)) as usize
    }

    pub fn len(&self) -> usize {
        self.shared.len() as usize
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Total number of items ever pushed.
    pub fn pushed(&self) -> u64 {
        self.tail
    }

    /// Pushes `value`, handing it back if the ring is full.
    pub fn push(&mut self, value: T) -> Result<(), T> {
        let cap = self.shared.capacity();
        if self.tail - self.cached_head == cap {
            self.cached_head = self.shared.head.load(Ordering::Acquire);
            if self.tail - self.cached_head == cap {
                return Err(value);
            }
        }
        debug_assert!(self.tail - self.cached_head < cap);
        self.owner.touch();
        // SAFETY: the slot at `tail` is outside [head, tail) so the consumer
        // will not read it until we publish the new tail below.
        unsafe { (*self.shared.slot(self.tail)).write(value) };
        self.tail += 1;
        self.shared.tail.store(self.tail, Ordering::Release);
        Ok(())
    }

    /// Pushes every item of `values` and publishes them with a single tail
    /// update, or pushes nothing if they do not all fit.
    pub fn push_all(&mut self, values: Vec<T>) -> Result<(), Vec<T>> {
        if values.len() > self.free() {
            return Err(values);
        }
        self.owner.touch();
        let mut pos = self.tail;
        for v in values {
            // SAFETY: as in `push`; all slots are free per the check above.
            unsafe { (*self.shared.slot(pos)).write(v) };
            pos += 1;
        }
        self.tail = pos;
        self.shared.tail.store(self.tail, Ordering::Release);
        Ok(())
    }

    /// Number of times the pushing logical thread changed.
    pub fn owner_changes(&self) -> u64 {
        self.owner.changes
    }
}

impl<T: Send + 'static> Producer<T> {
    pub fn probe(&self) -> RingProbe {
        RingProbe(self.shared.clone() as Arc<dyn LenProbe>)
    }
}

/// Read side of a [`ring`].
pub struct Consumer<T> {
    shared: Arc<Shared<T>>,
    head: u64,
    cached_tail: u64,
    owner: OwnerLog,
}

impl<T> Consumer<T> {
    pub fn capacity(&self) -> usize {
        self.shared.capacity() as usize
    }

    pub fn len(&self) -> usize {
        self.shared.len() as usize
    }

    pub fn is_empty(&self) -> bool {
        self.available() == 0
    }

    /// Items ready to pop (refreshes the cached tail).
    pub fn available(&self) -> usize {
        (self.shared.tail.load(Ordering::Acquire) - self.head) as usize
    }

    /// Total number of items ever popped.
    pub fn popped(&self) -> u64 {
        self.head
    }

    fn refresh(&mut self) -> bool {
        if self.head == self.cached_tail {
            self.cached_tail = self.shared.tail.load(Ordering::Acquire);
        }
        self.head != self.cached_tail
    }

    pub fn pop(&mut self) -> Option<T> {
        if !self.refresh() {
            return None;
        }
        debug_assert!(self.cached_tail - self.head <= self.shared.capacity());
        self.owner.touch();
        // SAFETY: `head < tail` so the slot was initialized and published by
        // the producer; it is not reused until we advance `head`.
        let value = unsafe { (*self.shared.slot(self.head)).assume_init_read() };
        self.head += 1;
        self.shared.head.store(self.head, Ordering::Release);
        Some(value)
    }

    /// Borrows the front item without consuming it.
    pub fn peek(&mut self) -> Option<&T> {
        if !self.refresh() {
            return None;
        }
        // SAFETY: as in `pop`, but the value stays in place.
        Some(unsafe { (*self.shared.slot(self.head)).assume_init_ref() })
    }

    /// Borrows the item `offset` places behind the front.
    pub fn peek_nth(&mut self, offset: usize) -> Option<&T> {
        let pos = self.head + offset as u64;
        if pos >= self.cached_tail {
            self.cached_tail = self.shared.tail.load(Ordering::Acquire);
            if pos >= self.cached_tail {
                return None;
            }
        }
        // SAFETY: `head <= pos < tail`.
        Some(unsafe { (*self.shared.slot(pos)).assume_init_ref() })
    }

    /// Number of times the popping logical thread changed.
    pub fn owner_changes(&self) -> u64 {
        self.owner.changes
    }
}

impl<T: Send + 'static> Consumer<T> {
    pub fn probe(&self) -> RingProbe {
        RingProbe(self.shared.clone() as Arc<dyn LenProbe>)
    }
}

trait LenProbe: Send + Sync {
    fn len(&self) -> u64;
    fn capacity(&self) -> u64;
}

impl<T: Send> LenProbe for Shared<T> {
    fn len(&self) -> u64 {
        Shared::len(self)
    }
    fn capacity(&self) -> u64 {
        Shared::capacity(self)
    }
}

/// Read-only depth observer usable from any thread.
#[derive(Clone)]
pub struct RingProbe(Arc<dyn LenProbe>);

impl RingProbe {
    pub fn len(&self) -> usize {
        self.0.len() as usize
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn capacity(&self) -> usize {
        self.0.capacity() as usize
    }
}

impl fmt::Debug for RingProbe {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("RingProbe")
            .field("len", &self.len())
            .field("capacity", &self.capacity())
            .finish()
    }
}

impl<T> fmt::Debug for Producer<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Producer")
            .field("capacity", &self.capacity())
            .field("pushed", &self.tail)
            .finish()
    }
}

impl<T> fmt::Debug for Consumer<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Consumer")
            .field("capacity", &self.capacity())
            .field("popped", &self.head)
            .finish()
    }
}
