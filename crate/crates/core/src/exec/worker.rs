use std::any::Any;
use std::collections::{HashMap, VecDeque};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;

use parking_lot::Mutex;

use super::actor::{Actor, ActorId, Cx, Step};
use super::dispatch::DispatchLayer;
use super::handle::{HandlePoll, InlineWork, RequestHandle};
use super::workload::{Arrivals, Workload};
use super::{CostModel, ExecError, ExecMode};
use crate::metrics::MetricsReport;
use crate::partition::{CoroutineError, Progress, Scheme, TaskRun};
use crate::ring::{
    Completion, Geometry, InstanceId, InstanceProbe, IoRequest, PushOutcome, Reaper, Submitter,
};

/// Delay before re-checking a dependency that is not yet satisfied.
const DEP_RETRY_NS: u64 = 10_000;

/// Results a worker hands back when the run ends.
#[derive(Debug, Default)]
pub(crate) struct Sink {
    pub states: Vec<(u64, Vec<u8>)>,
    pub errors: Vec<ExecError>,
}

pub(crate) struct DepState {
    done: Box<[AtomicBool]>,
    preds: HashMap<usize, Vec<usize>>,
}

impl DepState {
    pub(crate) fn new(tasks: usize, deps: &[(usize, usize)]) -> Self {
        let mut preds: HashMap<usize, Vec<usize>> = HashMap::new();
        for &(b, a) in deps {
            preds.entry(a).or_default().push(b);
        }
        DepState {
            done: (0..tasks).map(|_| AtomicBool::new(false)).collect(),
            preds,
        }
    }
}

pub(crate) struct PrivatePort {
    pub device_id: InstanceId,
    pub sub: Submitter,
    pub rea: Reaper,
    done: HashMap<u64, Completion>,
    buf: Vec<Completion>,
}

impl PrivatePort {
    pub(crate) fn new(device_id: InstanceId, sub: Submitter, rea: Reaper) -> Self {
        PrivatePort {
            device_id,
            sub,
            rea,
            done: HashMap::new(),
            buf: Vec::new(),
        }
    }
}

pub(crate) struct SharedInner {
    sub: Submitter,
    rea: Reaper,
    /// Worker index of every in-flight request.
    owners: HashMap<u64, usize>,
    done: HashMap<u64, Completion>,
    buf: Vec<Completion>,
}

/// An API instance any worker may use, behind a lock.
pub(crate) struct SharedInstance {
    device_id: InstanceId,
    probe: InstanceProbe,
    inner: Mutex<SharedInner>,
    /// Virtual time until which the lock is held.
    held_until: AtomicU64,
}

impl SharedInstance {
    pub(crate) fn new(device_id: InstanceId, probe: InstanceProbe, sub: Submitter, rea: Reaper) -> Self {
        SharedInstance {
            device_id,
            probe,
            inner: Mutex::new(SharedInner {
                sub,
                rea,
                owners: HashMap::new(),
                done: HashMap::new(),
                buf: Vec::new(),
            }),
            held_until: AtomicU64::new(0),
        }
    }

    pub(crate) fn owner_changes(&self) -> u64 {
        let g = self.inner.lock();
        g.sub.owner_changes() + g.rea.owner_changes()
    }
}

pub(crate) struct SharedPort {
    pub instances: Arc<[SharedInstance]>,
    /// Completions waiting in a done table, per worker.
    pub signals: Arc<[AtomicU64]>,
    next: usize,
}

impl SharedPort {
    pub(crate) fn new(instances: Arc<[SharedInstance]>, signals: Arc<[AtomicU64]>, start: usize) -> Self {
        SharedPort {
            instances,
            signals,
            next: start,
        }
    }
}

pub(crate) struct PoolPort {
    pub layer: Arc<DispatchLayer>,
    pub mode: ExecMode,
    signal: Arc<AtomicU64>,
}

impl PoolPort {
    pub(crate) fn new(layer: Arc<DispatchLayer>, mode: ExecMode) -> Self {
        PoolPort {
            layer,
            mode,
            signal: Arc::new(AtomicU64::new(0)),
        }
    }
}

pub(crate) enum Port {
    Private(PrivatePort),
    Shared(SharedPort),
    Pool(PoolPort),
}

struct Live {
    run: TaskRun,
    index: u64,
    post_io: bool,
}

enum Ticket {
    Private(u64),
    Shared(usize, u64),
    Handle(RequestHandle),
}

enum Item {
    Run(Live),
    Submit(Live, IoRequest),
    Poll(Live, Ticket),
    /// The task travelled with its request; the I/O thread runs its
    /// post-I/O work.
    Inline(RequestHandle),
}

type InlineOutput = (Live, Completion, Result<Option<Progress>, CoroutineError>);

enum Submitted {
    Ticket(Ticket),
    Bounced,
}

pub(crate) struct WorkerConfig {
    pub index: usize,
    pub workers: usize,
    pub scheme: Scheme,
    pub geometry: Geometry,
    pub cost: CostModel,
    pub run_id: u64,
}

/// User-space thread: admits tasks from its shard and runs their tasklets
/// or coroutine frames, submitting I/O through its port.
pub(crate) struct Worker {
    cfg: WorkerConfig,
    port: Port,
    work: Arc<Workload>,
    deps: Option<Arc<DepState>>,
    arrivals: Option<Arrivals>,
    next_k: u64,
    exhausted: bool,
    /// End times of the load-profile phases.
    phase_ends: Vec<u64>,
    live: usize,
    /// Live tasks whose I/O has completed and that have not yet submitted
    /// again or finished; they do not hold a queue-depth slot.
    post_io: usize,
    ready: VecDeque<Item>,
    misses: usize,
    report: MetricsReport,
    states: Vec<(u64, Vec<u8>)>,
    sink: Arc<Mutex<Sink>>,
    finished: bool,
}

impl Worker {
    pub(crate) fn new(
        cfg: WorkerConfig,
        port: Port,
        work: Arc<Workload>,
        deps: Option<Arc<DepState>>,
        sink: Arc<Mutex<Sink>>,
    ) -> Self {
        let arrivals = work
            .profile
            .as_ref()
            .map(|p| Arrivals::new(p, 0, cfg.index, cfg.workers));
        let report = MetricsReport::new(cfg.run_id);
        let phase_ends = work
            .profile
            .as_ref()
            .map(|p| p.spans().iter().map(|&(_, end, _)| end).collect())
            .unwrap_or_default();
        Worker {
            cfg,
            phase_ends,
            port,
            work,
            deps,
            arrivals,
            next_k: 0,
            exhausted: false,
            live: 0,
            post_io: 0,
            ready: VecDeque::new(),
            misses: 0,
            report,
            states: Vec::new(),
            sink,
            finished: false,
        }
    }

    fn record(&mut self, c: &Completion) {
        self.report.record_completion(c);
        if let Some(p) = self.phase_ends.iter().position(|&end| c.complete_time < end) {
            self.report.record_phase(p);
        }
    }

    fn me(&self) -> ActorId {
        self.cfg.index
    }

    /// Admits new tasks while the window has room. Returns a wake-up time
    /// if admission is waiting on an arrival or a dependency.
    fn admit(&mut self, cx: &mut Cx<'_>) -> Option<u64> {
        let now = cx.now();
        let total = self.work.task_count();
        let qd = self.work.qd;
        while !self.exhausted && self.live - self.post_io < qd && self.live < 2 * qd {
            let index = self.cfg.index as u64 + self.cfg.workers as u64 * self.next_k;
            if index >= total {
                self.exhausted = true;
                break;
            }
            let mut remote = 0;
            if let Some(deps) = &self.deps {
                if let Some(preds) = deps.preds.get(&(index as usize)) {
                    if !preds.iter().all(|&p| deps.done[p].load(Ordering::Acquire)) {
                        return Some(now + DEP_RETRY_NS);
                    }
                    remote = preds
                        .iter()
                        .filter(|&&p| p % self.cfg.workers != self.cfg.index)
                        .count() as u64;
                }
            }
            if let Some(arr) = self.arrivals.as_mut() {
                match arr.peek(now) {
                    None => {
                        self.exhausted = true;
                        break;
                    }
                    Some(t) if t > now => return Some(t),
                    Some(_) => arr.take(),
                }
            }
            self.report.cross_thread_msgs += remote;
            let (task, task_id) = self.work.task(index);
            self.next_k += 1;
            self.live += 1;
            self.misses = 0;
            cx.charge(self.cfg.cost.dispatch_ns);
            self.ready.push_front(Item::Run(Live {
                run: TaskRun::new(task, task_id, self.cfg.scheme),
                index,
                post_io: false,
            }));
        }
        None
    }

    fn fail(&mut self, e: ExecError) {
        self.sink.lock().errors.push(e);
        self.exhausted = true;
        self.ready.clear();
        self.live = 0;
        self.post_io = 0;
    }

    fn leave_post_io(&mut self, live: &mut Live) {
        if live.post_io {
            live.post_io = false;
            self.post_io -= 1;
        }
    }

    fn enter_post_io(&mut self, live: &mut Live) {
        if !live.post_io {
            live.post_io = true;
            self.post_io += 1;
        }
    }

    fn finish(&mut self, mut live: Live, state: Vec<u8>) {
        self.leave_post_io(&mut live);
        self.live -= 1;
        self.report.tasks_completed += 1;
        if let Some(deps) = &self.deps {
            deps.done[live.index as usize].store(true, Ordering::Release);
        }
        if self.work.collect_states {
            self.states.push((live.run.task_id(), state));
        }
    }

    fn note_progress(&mut self, p: &Progress) {
        if self.cfg.scheme == Scheme::Coroutine {
            self.report.frames.resumes += 1;
            self.report.frames.max_frame_bytes = self.report.frames.max_frame_bytes.max(p.frame_bytes);
        }
    }

    /// Runs the task's current compute tasklet or resumes its frame.
    fn advance(&mut self, mut live: Live, cx: &mut Cx<'_>) {
        let p = match live.run.advance(&self.cfg.geometry) {
            Ok(p) => p,
            Err(e) => return self.fail(e.into()),
        };
        cx.charge(self.cfg.cost.dispatch_ns);
        if self.cfg.scheme == Scheme::Coroutine {
            cx.charge(self.cfg.cost.resume_cost(p.resume_depth));
        }
        cx.work(p.compute_ns);
        self.after_progress(live, p, cx, true);
    }

    fn after_progress(&mut self, live: Live, p: Progress, cx: &mut Cx<'_>, computed_here: bool) {
        self.note_progress(&p);
        if let Some(state) = p.done {
            self.finish(live, state);
        } else if let Some(req) = p.submit {
            if computed_here && p.compute_ns > 0 && cx.is_virtual() {
                // The request leaves once the compute it follows is over.
                self.ready.push_front(Item::Submit(live, req));
            } else {
                self.submit(live, req, cx);
            }
        } else {
            unreachable!("a task that is not done must be waiting on I/O");
        }
    }

    fn submit(&mut self, mut live: Live, req: IoRequest, cx: &mut Cx<'_>) {
        self.leave_post_io(&mut live);
        let now = cx.now();
        let me = self.me();
        let cost = self.cfg.cost.clone();
        let outcome = match &mut self.port {
            Port::Private(p) => match p.sub.sq_push(req) {
                Ok(PushOutcome::Accepted(id)) => {
                    cx.charge(cost.submit_ns);
                    if !p.sub.sq_poll() {
                        p.sub.enter();
                        cx.charge(cost.syscall_ns);
                    }
                    cx.kick(p.device_id);
                    Ok(Submitted::Ticket(Ticket::Private(id)))
                }
                Ok(PushOutcome::QueueFull) => {
                    cx.charge(cost.submit_ns);
                    Ok(Submitted::Bounced)
                }
                Err(e) => Err(ExecError::from(e)),
            },
            Port::Shared(sp) => {
                let inst = sp.next % sp.instances.len();
                sp.next += 1;
                let si = &sp.instances[inst];
                let contention = &mut self.report.contention_events;
                with_lock(si, cx, &cost, contention, |g, cx| match g.sub.sq_push(req) {
                    Ok(PushOutcome::Accepted(id)) => {
                        g.owners.insert(id, me);
                        cx.charge(cost.submit_ns);
                        if !g.sub.sq_poll() {
                            g.sub.enter();
                            cx.charge(cost.syscall_ns);
                        }
                        cx.kick(si.device_id);
                        Ok(Submitted::Ticket(Ticket::Shared(inst, id)))
                    }
                    Ok(PushOutcome::QueueFull) => {
                        cx.charge(cost.submit_ns);
                        Ok(Submitted::Bounced)
                    }
                    Err(e) => Err(ExecError::from(e)),
                })
            }
            Port::Pool(pp) => {
                cx.charge(cost.pool_dispatch_ns);
                match pp.mode {
                    ExecMode::IoThreads => pp
                        .layer
                        .submit_signaled(req, Some(me), Some(pp.signal.clone()), None, cx)
                        .map(|h| Submitted::Ticket(Ticket::Handle(h))),
                    ExecMode::InlineCallbacks => {
                        // The task itself rides along; see `Item::Inline`.
                        return self.submit_inline(live, req, now, cx);
                    }
                }
            }
        };
        match outcome {
            Ok(Submitted::Ticket(t)) => {
                self.report.record_submit(now);
                self.ready.push_back(Item::Poll(live, t));
            }
            Ok(Submitted::Bounced) => {
                self.report.retries += 1;
                self.ready.push_back(Item::Submit(live, req));
            }
            Err(e) => self.fail(e),
        }
    }

    fn submit_inline(&mut self, live: Live, req: IoRequest, now: u64, cx: &mut Cx<'_>) {
        let Port::Pool(pp) = &self.port else { unreachable!() };
        let geometry = self.cfg.geometry;
        let cost = self.cfg.cost.clone();
        let work = InlineWork::new(move |c: &Completion, cx: &mut Cx<'_>| {
            let mut live = live;
            let out: Result<Option<Progress>, CoroutineError> = match live.run.deliver(c) {
                Some(state) => Ok(Some(Progress {
                    done: Some(state),
                    ..Progress::default()
                })),
                None => live.run.advance(&geometry).map(|p| {
                    if live.run.scheme() == Scheme::Coroutine {
                        cx.charge(cost.resume_cost(p.resume_depth));
                    }
                    cx.work(p.compute_ns);
                    Some(p)
                }),
            };
            Box::new((live, *c, out)) as Box<dyn Any + Send>
        });
        match pp
            .layer
            .submit_signaled(req, Some(self.cfg.index), Some(pp.signal.clone()), Some(work), cx)
        {
            Ok(h) => {
                self.report.record_submit(now);
                self.ready.push_back(Item::Inline(h));
            }
            Err(e) => self.fail(e),
        }
    }

    /// Checks one ticket; reaps whatever the port has on the way.
    fn check(&mut self, ticket: &Ticket, cx: &mut Cx<'_>) -> Option<Completion> {
        let cost = self.cfg.cost.clone();
        cx.charge(cost.poll_ns);
        match (&mut self.port, ticket) {
            (Port::Private(p), Ticket::Private(id)) => {
                if !p.done.contains_key(id) {
                    p.buf.clear();
                    let n = p.rea.cq_reap_into(usize::MAX, &mut p.buf);
                    cx.charge(cost.reap_ns * n as u64);
                    for c in p.buf.drain(..) {
                        p.done.insert(c.request_id, c);
                    }
                }
                p.done.remove(id)
            }
            (Port::Shared(sp), Ticket::Shared(inst, id)) => {
                let me = self.cfg.index;
                let si = &sp.instances[*inst];
                let signals = &sp.signals;
                let report = &mut self.report;
                let mut contention = 0;
                let mut remote = 0;
                let got = with_lock(si, cx, &cost, &mut contention, |g, cx| {
                    g.buf.clear();
                    let mut buf = std::mem::take(&mut g.buf);
                    let n = g.rea.cq_reap_into(usize::MAX, &mut buf);
                    cx.charge(cost.reap_ns * n as u64);
                    for c in buf.drain(..) {
                        let owner = g.owners.remove(&c.request_id).expect("owned request");
                        g.done.insert(c.request_id, c);
                        signals[owner].fetch_add(1, Ordering::AcqRel);
                        if owner != me {
                            remote += 1;
                            cx.notify(owner);
                        }
                    }
                    g.buf = buf;
                    let got = g.done.remove(id);
                    if got.is_some() {
                        signals[me].fetch_sub(1, Ordering::AcqRel);
                    }
                    got
                });
                report.contention_events += contention;
                report.cross_thread_msgs += remote;
                got
            }
            (Port::Pool(pp), Ticket::Handle(h)) => match h.poll() {
                HandlePoll::Done(c) => {
                    pp.signal.fetch_sub(1, Ordering::AcqRel);
                    Some(c)
                }
                _ => None,
            },
            _ => unreachable!("ticket from another port"),
        }
    }

    /// True if some poll could hit right now.
    fn anything_claimable(&self) -> bool {
        match &self.port {
            Port::Private(p) => !p.done.is_empty() || p.rea.cq_depth() > 0,
            Port::Shared(sp) => {
                sp.signals[self.cfg.index].load(Ordering::Acquire) > 0
                    || sp.instances.iter().any(|i| i.probe.depth().cq_depth > 0)
            }
            Port::Pool(pp) => pp.signal.load(Ordering::Acquire) > 0,
        }
    }

    fn on_completion(&mut self, mut live: Live, c: Completion, cx: &mut Cx<'_>) {
        self.record(&c);
        self.enter_post_io(&mut live);
        if let Some(state) = live.run.deliver(&c) {
            self.finish(live, state);
        } else if live.run.continues_in_place() {
            self.advance(live, cx);
        } else {
            self.ready.push_back(Item::Run(live));
        }
    }

    /// Runs one item. Returns false on a poll miss.
    fn run_item(&mut self, item: Item, cx: &mut Cx<'_>) -> bool {
        match item {
            Item::Run(live) => {
                self.advance(live, cx);
                true
            }
            Item::Submit(live, req) => {
                let before = self.report.retries;
                self.submit(live, req, cx);
                self.report.retries == before
            }
            Item::Poll(live, ticket) => match self.check(&ticket, cx) {
                Some(c) => {
                    self.on_completion(live, c, cx);
                    true
                }
                None => {
                    self.report.poll_misses += 1;
                    self.ready.push_back(Item::Poll(live, ticket));
                    false
                }
            },
            Item::Inline(h) => {
                cx.charge(self.cfg.cost.poll_ns);
                match h.poll() {
                    HandlePoll::Done(_) => {
                        if let Port::Pool(pp) = &self.port {
                            pp.signal.fetch_sub(1, Ordering::AcqRel);
                        }
                        let out = h.take_output().expect("inline work ran before completion");
                        let (live, c, res) = *out.downcast::<InlineOutput>().expect("inline output type");
                        self.record(&c);
                        match res {
                            Ok(Some(p)) => self.after_progress(live, p, cx, false),
                            Ok(None) => unreachable!(),
                            Err(e) => self.fail(e.into()),
                        }
                        true
                    }
                    _ => {
                        self.report.poll_misses += 1;
                        self.ready.push_back(Item::Inline(h));
                        false
                    }
                }
            }
        }
    }
}

/// Runs `f` under the instance lock. In virtual time a lock still held by
/// an earlier step is waited out and counted as contention.
fn with_lock<R>(
    si: &SharedInstance,
    cx: &mut Cx<'_>,
    cost: &CostModel,
    contention: &mut u64,
    f: impl FnOnce(&mut SharedInner, &mut Cx<'_>) -> R,
) -> R {
    if cx.is_virtual() {
        let at = cx.now() + cx.charged();
        let held = si.held_until.load(Ordering::Acquire);
        if held > at {
            *contention += 1;
            cx.charge(held - at + cost.contended_lock_ns);
        }
        cx.charge(cost.lock_ns);
        let mut g = si.inner.lock();
        let r = f(&mut g, cx);
        si.held_until.store(cx.now() + cx.charged(), Ordering::Release);
        r
    } else {
        let mut g = match si.inner.try_lock() {
            Some(g) => g,
            None => {
                *contention += 1;
                si.inner.lock()
            }
        };
        f(&mut g, cx)
    }
}

impl Actor for Worker {
    fn step(&mut self, cx: &mut Cx<'_>) -> Step {
        if self.finished {
            return Step::Done;
        }
        let wake = self.admit(cx);
        let Some(item) = self.ready.pop_front() else {
            if self.exhausted && self.live == 0 {
                self.finished = true;
                let mut sink = self.sink.lock();
                sink.states.append(&mut self.states);
                return Step::Done;
            }
            return match wake {
                Some(t) => Step::WaitUntil(t),
                None => Step::Idle,
            };
        };
        if self.run_item(item, cx) {
            self.misses = 0;
            return Step::Continue;
        }
        self.misses += 1;
        if self.anything_claimable() && self.misses <= self.ready.len() {
            return Step::Continue;
        }
        self.misses = 0;
        if self.ready.iter().any(|i| matches!(i, Item::Run(_) | Item::Submit(..))) {
            return Step::Continue;
        }
        match wake {
            Some(t) => Step::WaitUntil(t),
            None => Step::Idle,
        }
    }

    fn report(&self, out: &mut MetricsReport) {
        out.absorb(&self.report);
        match &self.port {
            Port::Private(p) => out.spsc_owner_changes += p.sub.owner_changes() + p.rea.owner_changes(),
            // Shared instances are counted once, by the first worker.
            Port::Shared(sp) if self.cfg.index == 0 => {
                out.spsc_owner_changes += sp.instances.iter().map(|i| i.owner_changes()).sum::<u64>();
            }
            Port::Shared(_) | Port::Pool(_) => {}
        }
    }

    fn name(&self) -> &'static str {
        "worker"
    }
}
