use std::hint;
use std::time::Instant;

use crate::clock::ClockSource;
use crate::metrics::MetricsReport;
use crate::ring::InstanceId;

/// Index of a logical thread within one run.
pub type ActorId = usize;

/// What an actor wants after one step.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Step {
    /// Made progress; step again once the charged time has elapsed.
    Continue,
    /// Nothing to do until notified.
    Idle,
    /// Nothing to do before this instant (or an earlier notification).
    WaitUntil(u64),
    Done,
}

/// Logical thread. The same code runs on an OS thread in wall-clock mode
/// and as a stepped coroutine in virtual time.
///
/// A step's effects become visible at the instant the step starts; the
/// actor is then busy for the time it charged.
pub trait Actor: Send {
    fn step(&mut self, cx: &mut Cx<'_>) -> Step;

    /// Adds this actor's counters to the run report.
    fn report(&self, _out: &mut MetricsReport) {}

    fn name(&self) -> &'static str {
        "actor"
    }
}

/// Per-step context handed to an [`Actor`].
pub struct Cx<'a> {
    me: ActorId,
    now: u64,
    charged: u64,
    clock: &'a ClockSource,
    notify: &'a mut Vec<ActorId>,
    kick: &'a mut Vec<InstanceId>,
}

impl<'a> Cx<'a> {
    pub(crate) fn new(
        me: ActorId,
        clock: &'a ClockSource,
        notify: &'a mut Vec<ActorId>,
        kick: &'a mut Vec<InstanceId>,
    ) -> Self {
        Cx {
            me,
            now: clock.now_ns(),
            charged: 0,
            clock,
            notify,
            kick,
        }
    }

    pub fn me(&self) -> ActorId {
        self.me
    }

    /// Start of the step (virtual) or the current wall time.
    pub fn now(&self) -> u64 {
        if self.clock.is_virtual() {
            self.now
        } else {
            self.clock.now_ns()
        }
    }

    pub fn is_virtual(&self) -> bool {
        self.clock.is_virtual()
    }

    pub fn clock(&self) -> &ClockSource {
        self.clock
    }

    /// Runtime overhead (submission, reaping, dispatch). Charged in virtual
    /// time only; on real threads the overhead is whatever the code costs.
    pub fn charge(&mut self, ns: u64) {
        self.charged += ns;
    }

    /// Application work: charged in virtual time, spun on real threads.
    pub fn work(&mut self, ns: u64) {
        if ns == 0 {
            return;
        }
        if self.clock.is_virtual() {
            self.charged += ns;
        } else {
            spin_for(ns);
        }
    }

    pub fn charged(&self) -> u64 {
        self.charged
    }

    /// Wakes an idle actor.
    pub fn notify(&mut self, actor: ActorId) {
        self.notify.push(actor);
    }

    /// Tells the device that `instance`'s SQ has new entries.
    pub fn kick(&mut self, instance: InstanceId) {
        self.kick.push(instance);
    }
}

/// Busy-waits for `ns` of wall time.
pub fn spin_for(ns: u64) {
    let start = Instant::now();
    let mut i = 0u32;
    while (start.elapsed().as_nanos() as u64) < ns {
        hint::spin_loop();
        i = i.wrapping_add(1);
        if i % 1024 == 0 {
            std::thread::yield_now();
        }
    }
}
