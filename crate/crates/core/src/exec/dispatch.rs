use std::collections::VecDeque;
use std::sync::atomic::{AtomicBool, AtomicU64, AtomicUsize, Ordering};
use std::sync::Arc;

use crossbeam_queue::ArrayQueue;
use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

use super::actor::{ActorId, Cx};
use super::handle::{InlineWork, RequestHandle};
use super::ExecError;
use crate::ring::{InstanceProbe, IoRequest};

pub const DEFAULT_INBOX_CAPACITY: usize = 1024;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Policy {
    #[default]
    RoundRobin,
    /// Shortest inbox among the active instances.
    LeastLoaded,
}

/// A request travelling from the dispatch layer to an I/O instance.
#[derive(Debug)]
pub struct Dispatch {
    pub req: IoRequest,
    pub handle: RequestHandle,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnitState {
    Running,
    /// Outside the active prefix but still holding work.
    Draining,
    Asleep,
}

#[derive(Default)]
struct InboxStats {
    peak: AtomicUsize,
    delivered: AtomicU64,
}

/// Routing layer of the pool architectures. Any thread may submit;
/// each instance inbox has a single consumer.
pub struct DispatchLayer {
    policy: Policy,
    inboxes: Box<[ArrayQueue<Dispatch>]>,
    stats: Box<[InboxStats]>,
    probes: Mutex<Vec<Option<InstanceProbe>>>,
    consumers: Mutex<Vec<Option<ActorId>>>,
    active: AtomicUsize,
    rr: AtomicUsize,
    overflow: Mutex<VecDeque<Dispatch>>,
    overflow_len: AtomicUsize,
    overflow_peak: AtomicUsize,
    shutdown: AtomicBool,
    next_handle: AtomicU64,
    completed: AtomicU64,
    inactive_deliveries: AtomicU64,
    duplicate_completions: AtomicU64,
}

impl DispatchLayer {
    pub fn new(instances: usize, inbox_capacity: usize, policy: Policy) -> Self {
        assert!(instances >= 1, "a pool needs at least one instance");
        DispatchLayer {
            policy,
            inboxes: (0..instances).map(|_| ArrayQueue::new(inbox_capacity.max(1))).collect(),
            stats: (0..instances).map(|_| InboxStats::default()).collect(),
            probes: Mutex::new(vec![None; instances]),
            consumers: Mutex::new(vec![None; instances]),
            active: AtomicUsize::new(instances),
            rr: AtomicUsize::new(0),
            overflow: Mutex::new(VecDeque::new()),
            overflow_len: AtomicUsize::new(0),
            overflow_peak: AtomicUsize::new(0),
            shutdown: AtomicBool::new(false),
            next_handle: AtomicU64::new(0),
            completed: AtomicU64::new(0),
            inactive_deliveries: AtomicU64::new(0),
            duplicate_completions: AtomicU64::new(0),
        }
    }

    pub fn instances(&self) -> usize {
        self.inboxes.len()
    }

    pub fn policy(&self) -> Policy {
        self.policy
    }

    /// Registers the actor that consumes `instance`'s inbox and its ring
    /// probe (used by the scaling controller).
    pub fn bind(&self, instance: usize, consumer: Option<ActorId>, probe: InstanceProbe) {
        self.consumers.lock()[instance] = consumer;
        self.probes.lock()[instance] = Some(probe);
    }

    pub fn active_count(&self) -> usize {
        self.active.load(Ordering::Acquire)
    }

    pub fn set_active_count(&self, n: usize) {
        let n = n.clamp(1, self.instances());
        self.active.store(n, Ordering::Release);
    }

    pub fn is_shut_down(&self) -> bool {
        self.shutdown.load(Ordering::SeqCst)
    }

    pub fn shut_down(&self) {
        self.shutdown.store(true, Ordering::SeqCst);
    }

    /// Submissions attempted, including ones refused after shutdown.
    pub fn handles_created(&self) -> u64 {
        self.next_handle.load(Ordering::SeqCst)
    }

    /// Handles done, plus refused submissions.
    pub fn handles_completed(&self) -> u64 {
        self.completed.load(Ordering::SeqCst)
    }

    pub fn inactive_deliveries(&self) -> u64 {
        self.inactive_deliveries.load(Ordering::Acquire)
    }

    pub fn duplicate_completions(&self) -> u64 {
        self.duplicate_completions.load(Ordering::Acquire)
    }

    pub fn overflow_len(&self) -> usize {
        self.overflow_len.load(Ordering::Acquire)
    }

    pub fn overflow_peak(&self) -> usize {
        self.overflow_peak.load(Ordering::Acquire)
    }

    pub fn inbox_len(&self, instance: usize) -> usize {
        self.inboxes[instance].len()
    }

    pub fn inbox_peak(&self, instance: usize) -> usize {
        self.stats[instance].peak.load(Ordering::Acquire)
    }

    pub fn delivered(&self, instance: usize) -> u64 {
        self.stats[instance].delivered.load(Ordering::Acquire)
    }

    /// Queued plus in-flight requests of one instance.
    pub fn load_of(&self, instance: usize) -> u64 {
        let inflight = self.probes.lock()[instance]
            .as_ref()
            .map_or(0, |p| p.depth().inflight);
        self.inbox_len(instance) as u64 + inflight
    }

    pub fn unit_state(&self, instance: usize) -> UnitState {
        if instance < self.active_count() {
            UnitState::Running
        } else if self.load_of(instance) > 0 {
            UnitState::Draining
        } else {
            UnitState::Asleep
        }
    }

    /// Routes `req` and returns its handle. Never blocks; with every inbox
    /// full the request waits in the overflow FIFO.
    pub fn submit(
        &self,
        req: IoRequest,
        owner: Option<ActorId>,
        inline: Option<InlineWork>,
        cx: &mut Cx<'_>,
    ) -> Result<RequestHandle, ExecError> {
        self.submit_signaled(req, owner, None, inline, cx)
    }

    /// As [`Self::submit`]; `signal` is incremented when the handle completes.
    pub fn submit_signaled(
        &self,
        req: IoRequest,
        owner: Option<ActorId>,
        signal: Option<Arc<AtomicU64>>,
        inline: Option<InlineWork>,
        cx: &mut Cx<'_>,
    ) -> Result<RequestHandle, ExecError> {
        // Counted before the shutdown check so a draining unit that has
        // seen the flag also sees this request.
        let id = self.next_handle.fetch_add(1, Ordering::SeqCst);
        if self.is_shut_down() {
            self.completed.fetch_add(1, Ordering::SeqCst);
            return Err(ExecError::PoolShutdown);
        }
        let handle = RequestHandle::with_signal(id, owner, signal, inline);
        let item = Dispatch {
            req,
            handle: handle.clone(),
        };
        if self.overflow_len() > 0 {
            self.park(item);
            self.drain_overflow(cx);
        } else if let Err(item) = self.deliver(item, cx) {
            self.park(item);
        }
        Ok(handle)
    }

    fn park(&self, item: Dispatch) {
        let mut q = self.overflow.lock();
        q.push_back(item);
        let len = q.len();
        self.overflow_len.store(len, Ordering::Release);
        self.overflow_peak.fetch_max(len, Ordering::AcqRel);
    }

    fn deliver(&self, item: Dispatch, cx: &mut Cx<'_>) -> Result<(), Dispatch> {
        let active = self.active_count();
        let first = match self.policy {
            Policy::RoundRobin => self.rr.fetch_add(1, Ordering::AcqRel) % active,
            Policy::LeastLoaded => (0..active)
                .min_by_key(|&i| (self.inboxes[i].len(), i))
                .unwrap_or(0),
        };
        let mut item = item;
        for k in 0..active {
            let idx = (first + k) % active;
            match self.inboxes[idx].push(item) {
                Ok(()) => {
                    if idx >= self.active_count() {
                        self.inactive_deliveries.fetch_add(1, Ordering::AcqRel);
                    }
                    let st = &self.stats[idx];
                    st.delivered.fetch_add(1, Ordering::AcqRel);
                    st.peak.fetch_max(self.inboxes[idx].len(), Ordering::AcqRel);
                    if let Some(a) = self.consumers.lock()[idx] {
                        cx.notify(a);
                    }
                    return Ok(());
                }
                Err(back) => item = back,
            }
        }
        Err(item)
    }

    /// Moves parked requests into inboxes, oldest first, until one refuses.
    pub fn drain_overflow(&self, cx: &mut Cx<'_>) {
        if self.overflow_len() == 0 {
            return;
        }
        let mut q = self.overflow.lock();
        while let Some(item) = q.pop_front() {
            if let Err(item) = self.deliver(item, cx) {
                q.push_front(item);
                break;
            }
        }
        self.overflow_len.store(q.len(), Ordering::Release);
    }

    pub(crate) fn pop(&self, instance: usize) -> Option<Dispatch> {
        self.inboxes[instance].pop()
    }

    pub(crate) fn note_completion(&self, fresh: bool) {
        if fresh {
            self.completed.fetch_add(1, Ordering::SeqCst);
        } else {
            self.duplicate_completions.fetch_add(1, Ordering::AcqRel);
        }
    }

    /// Requests parked or queued anywhere in the layer.
    pub fn queued(&self) -> usize {
        self.overflow_len() + self.inboxes.iter().map(|q| q.len()).sum::<usize>()
    }
}
