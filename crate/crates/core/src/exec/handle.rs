use std::any::Any;
use std::fmt;
use std::sync::atomic::{AtomicU32, AtomicU64, AtomicU8, Ordering};
use std::sync::{Arc, OnceLock};

use crossbeam_utils::Backoff;
use parking_lot::Mutex;

use super::actor::{ActorId, Cx};
use crate::ring::Completion;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u8)]
pub enum HandleStatus {
    Queued = 0,
    Submitted = 1,
    Done = 2,
}

/// Non-blocking view of a handle.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HandlePoll {
    Queued,
    Submitted,
    Done(Completion),
}

/// Post-I/O work run by the I/O thread that reaps the completion. Its
/// return value is handed to whoever polls the handle.
pub struct InlineWork(Box<dyn FnOnce(&Completion, &mut Cx<'_>) -> Box<dyn Any + Send> + Send>);

impl InlineWork {
    pub fn new<F>(f: F) -> Self
    where
        F: FnOnce(&Completion, &mut Cx<'_>) -> Box<dyn Any + Send> + Send + 'static,
    {
        InlineWork(Box::new(f))
    }

    pub fn run(self, c: &Completion, cx: &mut Cx<'_>) -> Box<dyn Any + Send> {
        (self.0)(c, cx)
    }
}

impl fmt::Debug for InlineWork {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("InlineWork")
    }
}

struct Inner {
    handle_id: u64,
    owner: Option<ActorId>,
    /// Bumped once when the handle completes; lets an owner tracking many
    /// handles tell whether any of them is worth polling.
    signal: Option<Arc<AtomicU64>>,
    status: AtomicU8,
    completion: OnceLock<Completion>,
    completions: AtomicU32,
    inline: Mutex<Option<InlineWork>>,
    output: Mutex<Option<Box<dyn Any + Send>>>,
}

/// Pollable token for a request submitted to a pool.
///
/// Status moves `Queued -> Submitted -> Done`; the completion slot is
/// written once and published with a release store of the status.
#[derive(Clone)]
pub struct RequestHandle(Arc<Inner>);

impl RequestHandle {
    #[cfg(test)]
    pub(crate) fn new(handle_id: u64, owner: Option<ActorId>, inline: Option<InlineWork>) -> Self {
        Self::with_signal(handle_id, owner, None, inline)
    }

    pub(crate) fn with_signal(
        handle_id: u64,
        owner: Option<ActorId>,
        signal: Option<Arc<AtomicU64>>,
        inline: Option<InlineWork>,
    ) -> Self {
        RequestHandle(Arc::new(Inner {
            handle_id,
            owner,
            signal,
            status: AtomicU8::new(HandleStatus::Queued as u8),
            completion: OnceLock::new(),
            completions: AtomicU32::new(0),
            inline: Mutex::new(inline),
            output: Mutex::new(None),
        }))
    }

    pub fn id(&self) -> u64 {
        self.0.handle_id
    }

    pub fn owner(&self) -> Option<ActorId> {
        self.0.owner
    }

    pub fn status(&self) -> HandleStatus {
        match self.0.status.load(Ordering::Acquire) {
            0 => HandleStatus::Queued,
            1 => HandleStatus::Submitted,
            _ => HandleStatus::Done,
        }
    }

    /// Never blocks.
    pub fn poll(&self) -> HandlePoll {
        match self.status() {
            HandleStatus::Queued => HandlePoll::Queued,
            HandleStatus::Submitted => HandlePoll::Submitted,
            HandleStatus::Done => HandlePoll::Done(*self.0.completion.get().expect("published before Done")),
        }
    }

    /// Spins with bounded backoff until the request is done.
    pub fn await_spin(&self) -> Completion {
        let backoff = Backoff::new();
        loop {
            if let HandlePoll::Done(c) = self.poll() {
                return c;
            }
            backoff.snooze();
        }
    }

    /// Times the completion was delivered; exactly one for a healthy run.
    pub fn deliveries(&self) -> u32 {
        self.0.completions.load(Ordering::Acquire)
    }

    pub(crate) fn mark_submitted(&self) {
        let _ = self.0.status.compare_exchange(
            HandleStatus::Queued as u8,
            HandleStatus::Submitted as u8,
            Ordering::AcqRel,
            Ordering::Acquire,
        );
    }

    pub(crate) fn take_inline(&self) -> Option<InlineWork> {
        self.0.inline.lock().take()
    }

    pub(crate) fn set_output(&self, out: Box<dyn Any + Send>) {
        *self.0.output.lock() = Some(out);
    }

    /// Output of the inline work, if any ran.
    pub fn take_output(&self) -> Option<Box<dyn Any + Send>> {
        self.0.output.lock().take()
    }

    /// Publishes the completion. Returns false (and publishes nothing) if
    /// the handle was already done.
    pub(crate) fn complete(&self, c: Completion) -> bool {
        self.0.completions.fetch_add(1, Ordering::AcqRel);
        if self.0.completion.set(c).is_err() {
            return false;
        }
        self.0.status.store(HandleStatus::Done as u8, Ordering::Release);
        if let Some(s) = &self.0.signal {
            s.fetch_add(1, Ordering::AcqRel);
        }
        true
    }
}

impl fmt::Debug for RequestHandle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("RequestHandle")
            .field("id", &self.id())
            .field("status", &self.status())
            .finish()
    }
}

pub fn handle_poll(h: &RequestHandle) -> HandlePoll {
    h.poll()
}

pub fn handle_await_spin(h: &RequestHandle) -> Completion {
    h.await_spin()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ring::IoResult;

    fn done(id: u64) -> Completion {
        Completion {
            request_id: id,
            user_data: 42,
            result: IoResult::Ok(0),
            submit_time: 0,
            complete_time: 1,
        }
    }

    #[test]
    fn status_is_monotone() {
        let h = RequestHandle::new(1, None, None);
        assert_eq!(h.poll(), HandlePoll::Queued);
        h.mark_submitted();
        assert_eq!(h.poll(), HandlePoll::Submitted);
        assert!(h.complete(done(1)));
        h.mark_submitted();
        assert_eq!(h.poll(), HandlePoll::Done(done(1)));
        assert_eq!(h.await_spin().user_data, 42);
    }

    #[test]
    fn second_completion_is_refused() {
        let h = RequestHandle::new(1, None, None);
        assert!(h.complete(done(1)));
        assert!(!h.complete(done(2)));
        assert_eq!(h.await_spin().request_id, 1);
        assert_eq!(h.deliveries(), 2);
    }

    #[test]
    fn completion_crosses_threads() {
        let h = RequestHandle::new(9, None, None);
        let h2 = h.clone();
        let t = std::thread::spawn(move || h2.await_spin());
        h.complete(done(9));
        assert_eq!(t.join().unwrap().request_id, 9);
    }
}
