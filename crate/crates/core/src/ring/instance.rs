use std::ops::Range;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use crossbeam_utils::CachePadded;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::request::{Completion, Geometry, IoRequest, RequestError, RequestId};
use super::spsc::{ring, Consumer, Producer, RingProbe};
use crate::clock::ClockSource;

/// Ring sizing and SQ-poll settings of one [`ApiInstance`].
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RingConfig {
    pub sq_entries: u32,
    pub cq_entries: u32,
    pub sq_poll: bool,
    pub sq_poll_idle_ns: u64,
}

impl Default for RingConfig {
    fn default() -> Self {
        RingConfig {
            sq_entries: 256,
            cq_entries: 512,
            sq_poll: true,
            sq_poll_idle_ns: 1_000_000,
        }
    }
}

impl RingConfig {
    pub fn validate(&self) -> Result<(), RingError> {
        for (which, value) in [("sq_entries", self.sq_entries), ("cq_entries", self.cq_entries)] {
            if value == 0 || !value.is_power_of_two() {
                return Err(RingError::NotPowerOfTwo { which, value });
            }
        }
        if self.cq_entries < self.sq_entries {
            return Err(RingError::CqSmallerThanSq {
                sq: self.sq_entries,
                cq: self.cq_entries,
            });
        }
        Ok(())
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RingError {
    #[error("{which} must be a non-zero power of two, got {value}")]
    NotPowerOfTwo { which: &'static str, value: u32 },
    #[error("cq_entries ({cq}) must be at least sq_entries ({sq})")]
    CqSmallerThanSq { sq: u32, cq: u32 },
}

/// Result of a submission attempt. `QueueFull` is ordinary backpressure.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum PushOutcome {
    Accepted(RequestId),
    QueueFull,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ChainOutcome {
    Accepted(Range<RequestId>),
    QueueFull,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct InstanceDepth {
    pub sq_depth: usize,
    pub cq_depth: usize,
    pub inflight: u64,
}

#[derive(Debug, Default)]
struct Counters {
    accepted: CachePadded<AtomicU64>,
    reaped: CachePadded<AtomicU64>,
}

impl Counters {
    fn inflight(&self) -> u64 {
        // Read `reaped` first: both only grow and accepted >= reaped.
        let reaped = self.reaped.load(Ordering::Acquire);
        self.accepted.load(Ordering::Acquire) - reaped
    }
}

/// One SQ + CQ pair.
///
/// The instance is the user-space side; the matching [`DeviceEndpoint`] is
/// handed to a backend. Submissions are bounded so that every accepted
/// request always has a free CQ slot: `inflight < cq capacity`.
#[derive(Debug)]
pub struct ApiInstance {
    submitter: Submitter,
    reaper: Reaper,
}

impl ApiInstance {
    pub fn new(
        config: &RingConfig,
        geometry: Geometry,
        clock: ClockSource,
    ) -> Result<(ApiInstance, DeviceEndpoint), RingError> {
        config.validate()?;
        let (sq_tx, sq_rx) = ring(config.sq_entries as usize);
        let (cq_tx, cq_rx) = ring(config.cq_entries as usize);
        let counters = Arc::new(Counters::default());
        let doorbell = Arc::new(AtomicU64::new(0));
        let instance = ApiInstance {
            submitter: Submitter {
                sq: sq_tx,
                counters: counters.clone(),
                next_id: 0,
                cq_capacity: config.cq_entries as u64,
                geometry,
                clock,
                sq_poll: config.sq_poll,
                doorbell: doorbell.clone(),
            },
            reaper: Reaper {
                cq: cq_rx,
                counters,
            },
        };
        let endpoint = DeviceEndpoint {
            sq: sq_rx,
            cq: cq_tx,
            doorbell,
            sq_poll: config.sq_poll,
            sq_poll_idle_ns: config.sq_poll_idle_ns,
        };
        Ok((instance, endpoint))
    }

    pub fn sq_push(&mut self, req: IoRequest) -> Result<PushOutcome, RequestError> {
        self.submitter.sq_push(req)
    }

    pub fn submit_linked(&mut self, reqs: Vec<IoRequest>) -> Result<ChainOutcome, RequestError> {
        self.submitter.submit_linked(reqs)
    }

    /// Rings the doorbell; required when SQ polling is disabled.
    pub fn enter(&mut self) {
        self.submitter.enter()
    }

    pub fn cq_reap(&mut self, max: usize) -> Vec<Completion> {
        self.reaper.cq_reap(max)
    }

    pub fn cq_reap_into(&mut self, max: usize, out: &mut Vec<Completion>) -> usize {
        self.reaper.cq_reap_into(max, out)
    }

    pub fn instance_depth(&self) -> InstanceDepth {
        InstanceDepth {
            sq_depth: self.submitter.sq.len(),
            cq_depth: self.reaper.cq.len(),
            inflight: self.submitter.counters.inflight(),
        }
    }

    pub fn submitter(&mut self) -> &mut Submitter {
        &mut self.submitter
    }

    pub fn reaper(&mut self) -> &mut Reaper {
        &mut self.reaper
    }

    pub fn probe(&self) -> InstanceProbe {
        InstanceProbe {
            sq: self.submitter.sq.probe(),
            cq: self.reaper.cq.probe(),
            counters: self.submitter.counters.clone(),
        }
    }

    /// Separates the submission and completion sides so that two threads
    /// can drive them.
    pub fn split(self) -> (Submitter, Reaper) {
        (self.submitter, self.reaper)
    }

    pub fn sq_poll(&self) -> bool {
        self.submitter.sq_poll
    }

    pub fn geometry(&self) -> Geometry {
        self.submitter.geometry
    }
}

/// Submission side of an [`ApiInstance`].
#[derive(Debug)]
pub struct Submitter {
    sq: Producer<IoRequest>,
    counters: Arc<Counters>,
    next_id: RequestId,
    cq_capacity: u64,
    geometry: Geometry,
    clock: ClockSource,
    sq_poll: bool,
    doorbell: Arc<AtomicU64>,
}

impl Submitter {
    fn has_room(&mut self, n: usize) -> bool {
        self.sq.free() >= n && self.counters.inflight() + n as u64 <= self.cq_capacity
    }

    pub fn sq_push(&mut self, mut req: IoRequest) -> Result<PushOutcome, RequestError> {
        req.validate(&self.geometry)?;
        if !self.has_room(1) {
            return Ok(PushOutcome::QueueFull);
        }
        let id = self.next_id;
        req.request_id = id;
        req.submit_time = self.clock.now_ns();
        // Counted before publication so a fast reaper never sees reaped > accepted.
        self.counters.accepted.fetch_add(1, Ordering::AcqRel);
        if self.sq.push(req).is_err() {
            unreachable!("SQ space was checked");
        }
        self.next_id += 1;
        Ok(PushOutcome::Accepted(id))
    }

    /// Enqueues a chain all-or-nothing. Every request but the last must be
    /// linked; the chain is published with one tail update.
    pub fn submit_linked(&mut self, mut reqs: Vec<IoRequest>) -> Result<ChainOutcome, RequestError> {
        let Some((last, init)) = reqs.split_last() else {
            return Err(RequestError::EmptyChain);
        };
        if reqs.len() > self.sq.capacity() {
            return Err(RequestError::ChainTooLong {
                len: reqs.len(),
                capacity: self.sq.capacity(),
            });
        }
        if init.iter().any(|r| !r.link) || last.link {
            return Err(RequestError::BrokenChain);
        }
        for r in &reqs {
            r.validate(&self.geometry)?;
        }
        if !self.has_room(reqs.len()) {
            return Ok(ChainOutcome::QueueFull);
        }
        let now = self.clock.now_ns();
        let first = self.next_id;
        for r in reqs.iter_mut() {
            r.request_id = self.next_id;
            r.submit_time = now;
            self.next_id += 1;
        }
        self.counters
            .accepted
            .fetch_add(reqs.len() as u64, Ordering::AcqRel);
        if self.sq.push_all(reqs).is_err() {
            unreachable!("SQ space was checked");
        }
        Ok(ChainOutcome::Accepted(first..self.next_id))
    }

    pub fn enter(&mut self) {
        self.doorbell.store(self.sq.pushed(), Ordering::Release);
    }

    pub fn inflight(&self) -> u64 {
        self.counters.inflight()
    }

    pub fn sq_depth(&self) -> usize {
        self.sq.len()
    }

    pub fn sq_capacity(&self) -> usize {
        self.sq.capacity()
    }

    pub fn cq_capacity(&self) -> usize {
        self.cq_capacity as usize
    }

    /// True when neither the SQ nor the CQ bound admits another request.
    pub fn is_full(&mut self) -> bool {
        !self.has_room(1)
    }

    pub fn owner_changes(&self) -> u64 {
        self.sq.owner_changes()
    }

    pub fn sq_poll(&self) -> bool {
        self.sq_poll
    }

    pub fn geometry(&self) -> Geometry {
        self.geometry
    }

    pub fn accepted(&self) -> u64 {
        self.counters.accepted.load(Ordering::Acquire)
    }

    /// Id the next accepted request will get.
    pub fn next_request_id(&self) -> RequestId {
        self.next_id
    }
}

/// Completion side of an [`ApiInstance`].
#[derive(Debug)]
pub struct Reaper {
    cq: Consumer<Completion>,
    counters: Arc<Counters>,
}

impl Reaper {
    pub fn cq_reap(&mut self, max: usize) -> Vec<Completion> {
        let mut out = Vec::new();
        self.cq_reap_into(max, &mut out);
        out
    }

    pub fn cq_reap_into(&mut self, max: usize, out: &mut Vec<Completion>) -> usize {
        let mut n = 0;
        while n < max {
            match self.cq.pop() {
                Some(c) => {
                    out.push(c);
                    n += 1;
                }
                None => break,
            }
        }
        if n > 0 {
            self.counters.reaped.fetch_add(n as u64, Ordering::AcqRel);
        }
        n
    }

    pub fn reap_one(&mut self) -> Option<Completion> {
        let c = self.cq.pop()?;
        self.counters.reaped.fetch_add(1, Ordering::AcqRel);
        Some(c)
    }

    pub fn peek(&mut self) -> Option<&Completion> {
        self.cq.peek()
    }

    pub fn cq_depth(&self) -> usize {
        self.cq.available()
    }

    pub fn inflight(&self) -> u64 {
        self.counters.inflight()
    }

    pub fn owner_changes(&self) -> u64 {
        self.cq.owner_changes()
    }
}

/// Thread-safe read-only view of an instance's depths.
#[derive(Clone, Debug)]
pub struct InstanceProbe {
    sq: RingProbe,
    cq: RingProbe,
    counters: Arc<Counters>,
}

impl InstanceProbe {
    pub fn depth(&self) -> InstanceDepth {
        InstanceDepth {
            sq_depth: self.sq.len(),
            cq_depth: self.cq.len(),
            inflight: self.counters.inflight(),
        }
    }
}

/// Device side of an [`ApiInstance`]: sole SQ consumer and CQ producer.
#[derive(Debug)]
pub struct DeviceEndpoint {
    sq: Consumer<IoRequest>,
    cq: Producer<Completion>,
    doorbell: Arc<AtomicU64>,
    sq_poll: bool,
    sq_poll_idle_ns: u64,
}

impl DeviceEndpoint {
    /// Submissions the device may consume now. Without SQ polling only
    /// entries covered by the last doorbell count.
    pub fn pending(&self) -> usize {
        let avail = self.sq.available();
        if self.sq_poll {
            avail
        } else {
            let rung = self.doorbell.load(Ordering::Acquire);
            avail.min(rung.saturating_sub(self.sq.popped()) as usize)
        }
    }

    pub fn peek_submission(&mut self) -> Option<&IoRequest> {
        if self.pending() == 0 {
            return None;
        }
        self.sq.peek()
    }

    pub fn take_submission(&mut self) -> Option<IoRequest> {
        if self.pending() == 0 {
            return None;
        }
        self.sq.pop()
    }

    /// Posts a completion. The submission bound guarantees space; a full CQ
    /// hands the completion back.
    pub fn post_completion(&mut self, c: Completion) -> Result<(), Completion> {
        self.cq.push(c)
    }

    pub fn sq_poll(&self) -> bool {
        self.sq_poll
    }

    pub fn sq_poll_idle_ns(&self) -> u64 {
        self.sq_poll_idle_ns
    }

    pub fn consumed(&self) -> u64 {
        self.sq.popped()
    }

    pub fn sq_depth(&self) -> usize {
        self.sq.len()
    }

    pub fn cq_depth(&self) -> usize {
        self.cq.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ring::request::{IoResult, RequestError};

    fn instance(sq: u32, cq: u32) -> (ApiInstance, DeviceEndpoint) {
        let cfg = RingConfig {
            sq_entries: sq,
            cq_entries: cq,
            ..RingConfig::default()
        };
        ApiInstance::new(&cfg, Geometry::default(), ClockSource::virtual_clock()).unwrap()
    }

    fn complete(ep: &mut DeviceEndpoint, n: usize) {
        for _ in 0..n {
            let r = ep.take_submission().unwrap();
            ep.post_completion(Completion {
                request_id: r.request_id,
                user_data: r.user_data,
                result: IoResult::Ok(r.length),
                submit_time: r.submit_time,
                complete_time: 1,
            })
            .unwrap();
        }
    }

    #[test]
    fn fresh_instance_is_empty() {
        let (inst, _) = instance(8, 16);
        assert_eq!(inst.instance_depth(), InstanceDepth::default());
    }

    #[test]
    fn push_into_empty_sq() {
        let (mut inst, _) = instance(8, 16);
        assert_eq!(inst.sq_push(IoRequest::nop()), Ok(PushOutcome::Accepted(0)));
        assert_eq!(inst.instance_depth().sq_depth, 1);
    }

    #[test]
    fn full_sq_reports_queue_full_without_change() {
        let (mut inst, _) = instance(8, 16);
        for i in 0..8 {
            assert_eq!(inst.sq_push(IoRequest::nop()), Ok(PushOutcome::Accepted(i)));
        }
        let before = inst.instance_depth();
        assert_eq!(inst.sq_push(IoRequest::nop()), Ok(PushOutcome::QueueFull));
        assert_eq!(inst.instance_depth(), before);
        assert_eq!(before.sq_depth, 8);
    }

    #[test]
    fn depth_counts() {
        let (mut inst, mut ep) = instance(8, 16);
        for _ in 0..4 {
            inst.sq_push(IoRequest::nop()).unwrap();
        }
        assert_eq!(
            inst.instance_depth(),
            InstanceDepth {
                sq_depth: 4,
                cq_depth: 0,
                inflight: 4
            }
        );
        complete(&mut ep, 2);
        assert_eq!(
            inst.instance_depth(),
            InstanceDepth {
                sq_depth: 2,
                cq_depth: 2,
                inflight: 4
            }
        );
        assert_eq!(inst.cq_reap(8).len(), 2);
        assert_eq!(inst.instance_depth().inflight, 2);
    }

    #[test]
    fn reap_truncates_to_max() {
        let (mut inst, mut ep) = instance(8, 16);
        assert!(inst.cq_reap(4).is_empty());
        for _ in 0..3 {
            inst.sq_push(IoRequest::nop()).unwrap();
        }
        complete(&mut ep, 3);
        let first = inst.cq_reap(2);
        assert_eq!(first.iter().map(|c| c.request_id).collect::<Vec<_>>(), [0, 1]);
        let second = inst.cq_reap(2);
        assert_eq!(second.iter().map(|c| c.request_id).collect::<Vec<_>>(), [2]);
    }

    #[test]
    fn inflight_bounded_by_cq_capacity() {
        // CQ of 8 with SQ of 8: once 8 are in flight (even if consumed from the
        // SQ), further pushes stall until something is reaped.
        let (mut inst, mut ep) = instance(8, 8);
        for _ in 0..8 {
            inst.sq_push(IoRequest::nop()).unwrap();
        }
        complete(&mut ep, 8);
        assert_eq!(inst.instance_depth().sq_depth, 0);
        assert_eq!(inst.sq_push(IoRequest::nop()), Ok(PushOutcome::QueueFull));
        inst.cq_reap(1);
        assert!(matches!(inst.sq_push(IoRequest::nop()), Ok(PushOutcome::Accepted(8))));
    }

    #[test]
    fn cq_smaller_than_sq_is_rejected() {
        let cfg = RingConfig {
            sq_entries: 16,
            cq_entries: 8,
            ..RingConfig::default()
        };
        assert_eq!(
            ApiInstance::new(&cfg, Geometry::default(), ClockSource::default()).unwrap_err(),
            RingError::CqSmallerThanSq { sq: 16, cq: 8 }
        );
    }

    #[test]
    fn chain_validation() {
        let (mut inst, _) = instance(4, 8);
        assert_eq!(inst.submit_linked(vec![]), Err(RequestError::EmptyChain));
        assert_eq!(
            inst.submit_linked(vec![IoRequest::nop(), IoRequest::nop()]),
            Err(RequestError::BrokenChain)
        );
        assert!(matches!(
            inst.submit_linked(vec![IoRequest::nop().linked(); 5]),
            Err(RequestError::ChainTooLong { len: 5, capacity: 4 })
        ));
        inst.sq_push(IoRequest::nop()).unwrap();
        inst.sq_push(IoRequest::nop()).unwrap();
        let chain = vec![IoRequest::nop().linked(), IoRequest::nop().linked(), IoRequest::fsync()];
        assert_eq!(inst.submit_linked(chain), Ok(ChainOutcome::QueueFull));
        assert_eq!(inst.instance_depth().sq_depth, 2);
        let chain = vec![IoRequest::write(0, 4096).linked(), IoRequest::fsync()];
        assert_eq!(inst.submit_linked(chain), Ok(ChainOutcome::Accepted(2..4)));
    }

    #[test]
    fn doorbell_gates_consumption_without_sq_poll() {
        let cfg = RingConfig {
            sq_poll: false,
            ..RingConfig::default()
        };
        let (mut inst, mut ep) =
            ApiInstance::new(&cfg, Geometry::default(), ClockSource::default()).unwrap();
        inst.sq_push(IoRequest::nop()).unwrap();
        inst.sq_push(IoRequest::nop()).unwrap();
        assert_eq!(ep.pending(), 0);
        assert!(ep.take_submission().is_none());
        inst.enter();
        assert_eq!(ep.pending(), 2);
        inst.sq_push(IoRequest::nop()).unwrap();
        assert_eq!(ep.pending(), 2);
    }
}
