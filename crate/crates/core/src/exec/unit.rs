use std::collections::HashMap;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use parking_lot::Mutex;

use super::actor::{Actor, ActorId, Cx, Step};
use super::dispatch::DispatchLayer;
use super::handle::RequestHandle;
use super::{CostModel, Threading};
use crate::metrics::MetricsReport;
use crate::ring::{ApiInstance, Completion, InstanceId, IoResult, PushOutcome, Reaper, Submitter, EINVAL};

const BATCH: usize = 16;

type HandleMap = HashMap<u64, RequestHandle>;

struct SubmitSide {
    index: usize,
    device_id: InstanceId,
    sub: Submitter,
    layer: Arc<DispatchLayer>,
    cost: CostModel,
    /// Request accounting; only kept when the pool has no workers that
    /// record it themselves.
    seen: Option<MetricsReport>,
}

impl SubmitSide {
    /// Moves up to one batch from the inbox into the SQ.
    fn run(&mut self, cx: &mut Cx<'_>, map: &Mutex<HandleMap>) -> usize {
        self.layer.drain_overflow(cx);
        let mut n = 0;
        while n < BATCH && !self.sub.is_full() {
            let Some(d) = self.layer.pop(self.index) else { break };
            let id = self.sub.next_request_id();
            map.lock().insert(id, d.handle.clone());
            match self.sub.sq_push(d.req) {
                Ok(PushOutcome::Accepted(_)) => {
                    if let Some(r) = self.seen.as_mut() {
                        r.record_submit(cx.now());
                    }
                    d.handle.mark_submitted();
                    cx.charge(self.cost.submit_ns + self.cost.pool_dispatch_ns);
                    n += 1;
                }
                Ok(PushOutcome::QueueFull) => unreachable!("room was checked"),
                Err(_) => {
                    map.lock().remove(&id);
                    let now = cx.now();
                    let c = Completion {
                        request_id: id,
                        user_data: d.req.user_data,
                        result: IoResult::Error(EINVAL),
                        submit_time: now,
                        complete_time: now,
                    };
                    if let Some(r) = self.seen.as_mut() {
                        r.record_submit(now);
                        r.record_completion(&c);
                    }
                    d.handle.mark_submitted();
                    publish(&self.layer, &d.handle, c, cx);
                }
            }
        }
        if n > 0 {
            if !self.sub.sq_poll() {
                self.sub.enter();
                cx.charge(self.cost.syscall_ns);
            }
            cx.kick(self.device_id);
        }
        n
    }

    fn report(&self, out: &mut MetricsReport) {
        out.spsc_owner_changes += self.sub.owner_changes();
        if let Some(r) = &self.seen {
            out.absorb(r);
        }
    }
}

struct ReapSide {
    rea: Reaper,
    layer: Arc<DispatchLayer>,
    cost: CostModel,
    buf: Vec<Completion>,
    /// Handles whose inline work ran last step; published at the start of
    /// the next one, once that work's time has passed.
    pending: Vec<(RequestHandle, Completion)>,
    seen: Option<MetricsReport>,
}

impl ReapSide {
    fn run(&mut self, cx: &mut Cx<'_>, map: &Mutex<HandleMap>) -> usize {
        let mut n = self.pending.len();
        for (h, c) in self.pending.drain(..) {
            publish(&self.layer, &h, c, cx);
        }
        self.buf.clear();
        let got = self.rea.cq_reap_into(BATCH, &mut self.buf);
        n += got;
        for c in self.buf.drain(..) {
            cx.charge(self.cost.reap_ns);
            if let Some(r) = self.seen.as_mut() {
                r.record_completion(&c);
            }
            let h = map
                .lock()
                .remove(&c.request_id)
                .expect("completion for a request this unit submitted");
            match h.take_inline() {
                Some(work) => {
                    let out = work.run(&c, cx);
                    h.set_output(out);
                    self.pending.push((h, c));
                }
                None => publish(&self.layer, &h, c, cx),
            }
        }
        n
    }

    fn report(&self, out: &mut MetricsReport) {
        out.spsc_owner_changes += self.rea.owner_changes();
        if let Some(r) = &self.seen {
            out.absorb(r);
        }
    }

    fn quiescent(&self) -> bool {
        self.pending.is_empty() && self.rea.inflight() == 0
    }
}

fn publish(layer: &DispatchLayer, h: &RequestHandle, c: Completion, cx: &mut Cx<'_>) {
    let fresh = h.complete(c);
    layer.note_completion(fresh);
    if let Some(owner) = h.owner() {
        cx.notify(owner);
    }
}

fn finished(layer: &DispatchLayer) -> bool {
    layer.is_shut_down() && layer.handles_completed() >= layer.handles_created()
}

/// I/O instance driven by one thread that both submits and reaps.
struct SingleUnit {
    submit: SubmitSide,
    reap: ReapSide,
    map: Mutex<HandleMap>,
}

impl Actor for SingleUnit {
    fn step(&mut self, cx: &mut Cx<'_>) -> Step {
        let mut n = self.reap.run(cx, &self.map);
        n += self.submit.run(cx, &self.map);
        if n > 0 {
            Step::Continue
        } else if finished(&self.submit.layer) && self.reap.quiescent() {
            Step::Done
        } else {
            Step::Idle
        }
    }

    fn report(&self, out: &mut MetricsReport) {
        self.submit.report(out);
        self.reap.report(out);
    }

    fn name(&self) -> &'static str {
        "io-unit"
    }
}

struct PairShared {
    map: Mutex<HandleMap>,
    submit_done: AtomicBool,
}

struct PairSubmitter {
    side: SubmitSide,
    shared: Arc<PairShared>,
}

impl Actor for PairSubmitter {
    fn step(&mut self, cx: &mut Cx<'_>) -> Step {
        if self.side.run(cx, &self.shared.map) > 0 {
            Step::Continue
        } else if finished(&self.side.layer) {
            self.shared.submit_done.store(true, Ordering::Release);
            Step::Done
        } else {
            Step::Idle
        }
    }

    fn report(&self, out: &mut MetricsReport) {
        self.side.report(out);
    }

    fn name(&self) -> &'static str {
        "io-submitter"
    }
}

struct PairReaper {
    side: ReapSide,
    shared: Arc<PairShared>,
}

impl Actor for PairReaper {
    fn step(&mut self, cx: &mut Cx<'_>) -> Step {
        if self.side.run(cx, &self.shared.map) > 0 {
            Step::Continue
        } else if self.shared.submit_done.load(Ordering::Acquire) && self.side.quiescent() {
            Step::Done
        } else {
            Step::Idle
        }
    }

    fn report(&self, out: &mut MetricsReport) {
        self.side.report(out);
    }

    fn name(&self) -> &'static str {
        "io-reaper"
    }
}

/// Actor ids of one I/O instance: the inbox consumer and the CQ reaper
/// (the same actor for [`Threading::SingleThread`]).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct UnitHandles {
    pub submitter: ActorId,
    pub reaper: ActorId,
}

/// Builds the actor(s) of I/O instance `index` and binds them to the
/// dispatch layer. `first_id` is the actor id the first returned actor
/// will receive. With `record` the unit counts submissions and
/// completions in its report.
#[allow(clippy::too_many_arguments)]
pub fn spawn_unit(
    index: usize,
    device_id: InstanceId,
    instance: ApiInstance,
    layer: Arc<DispatchLayer>,
    threading: Threading,
    cost: CostModel,
    first_id: ActorId,
    record: bool,
) -> (Vec<Box<dyn Actor>>, UnitHandles) {
    let seen = record.then(MetricsReport::default);
    layer.bind(index, Some(first_id), instance.probe());
    let (sub, rea) = instance.split();
    let submit = SubmitSide {
        index,
        device_id,
        sub,
        layer: layer.clone(),
        cost: cost.clone(),
        seen: seen.clone(),
    };
    let reap = ReapSide {
        rea,
        layer,
        cost,
        buf: Vec::with_capacity(BATCH),
        pending: Vec::new(),
        seen,
    };
    match threading {
        Threading::SingleThread => (
            vec![Box::new(SingleUnit {
                submit,
                reap,
                map: Mutex::new(HashMap::new()),
            })],
            UnitHandles {
                submitter: first_id,
                reaper: first_id,
            },
        ),
        Threading::SubmitReapPair => {
            let shared = Arc::new(PairShared {
                map: Mutex::new(HashMap::new()),
                submit_done: AtomicBool::new(false),
            });
            (
                vec![
                    Box::new(PairSubmitter {
                        side: submit,
                        shared: shared.clone(),
                    }),
                    Box::new(PairReaper { side: reap, shared }),
                ],
                UnitHandles {
                    submitter: first_id,
                    reaper: first_id + 1,
                },
            )
        }
    }
}
