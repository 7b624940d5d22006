use std::collections::BTreeMap;
use std::io::{self, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::calendar::EventCalendar;
use super::model::{DeviceError, DeviceModel};
use super::poll_thread::{PollState, PollThreadModel};
use crate::ring::{
    Backend, Completion, DeviceEndpoint, Geometry, InstanceId, IoKind, IoRequest, IoResult,
};

enum Event {
    /// An operation leaves service. `rest` holds the remaining members of
    /// its linked chain, which keep the same device slot.
    Finish {
        inst: InstanceId,
        req: IoRequest,
        rest: Vec<IoRequest>,
    },
    PollTimeout {
        inst: InstanceId,
    },
    Wake {
        inst: InstanceId,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceKind {
    Consume,
    Complete,
    Sleep,
    Wake,
}

impl TraceKind {
    fn as_str(self) -> &'static str {
        match self {
            TraceKind::Consume => "consume",
            TraceKind::Complete => "complete",
            TraceKind::Sleep => "sleep",
            TraceKind::Wake => "wake",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub time_ns: u64,
    pub kind: TraceKind,
    pub instance_id: InstanceId,
    pub request_id: Option<u64>,
    /// Result of a `Complete` event.
    pub result: Option<IoResult>,
}

pub const TRACE_CSV_HEADER: &str = "time_ns,event_kind,instance_id,request_id";

/// Writes a trace as CSV (`time_ns,event_kind,instance_id,request_id`).
pub fn write_trace_csv<W: Write>(mut out: W, trace: &[TraceEvent]) -> io::Result<()> {
    writeln!(out, "{TRACE_CSV_HEADER}")?;
    for e in trace {
        match e.request_id {
            Some(id) => writeln!(out, "{},{},{},{}", e.time_ns, e.kind.as_str(), e.instance_id, id)?,
            None => writeln!(out, "{},{},{},", e.time_ns, e.kind.as_str(), e.instance_id)?,
        }
    }
    Ok(())
}

struct Attached {
    ep: DeviceEndpoint,
    poll: Option<PollThreadModel>,
    poll_free_at: u64,
    timeout_pending: bool,
    in_service: u32,
    service_busy_since: u64,
    service_busy_ns: u64,
    last_read_end: Option<u64>,
    consumed: u64,
    completed: u64,
    touched: bool,
}

/// Per-instance device-side counters.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct DeviceInstanceStats {
    pub consumed: u64,
    pub completed: u64,
    pub poll_busy_ns: u64,
    /// Time with at least one of the instance's requests in service.
    pub service_busy_ns: u64,
}

/// Deterministic discrete-event storage device.
///
/// A single engine multiplexes any number of attached SQs onto
/// `internal_parallelism` service slots. Each SQ with polling enabled has a
/// [`PollThreadModel`] that must be `Active` for entries to be consumed.
/// Identical model, seed and submission schedule give identical traces.
pub struct SimDevice {
    model: DeviceModel,
    faults: BTreeMap<u64, i32>,
    rng: ChaCha8Rng,
    calendar: EventCalendar<Event>,
    instances: Vec<Attached>,
    busy_slots: u32,
    rr: usize,
    touched: Vec<InstanceId>,
    trace: Option<Vec<TraceEvent>>,
}

impl SimDevice {
    pub fn new(model: DeviceModel, seed: u64) -> Result<Self, DeviceError> {
        model.validate()?;
        let faults = model
            .fault_plan
            .iter()
            .map(|f| (f.request_id, f.code))
            .collect();
        Ok(SimDevice {
            model,
            faults,
            rng: ChaCha8Rng::seed_from_u64(seed),
            calendar: EventCalendar::new(),
            instances: Vec::new(),
            busy_slots: 0,
            rr: 0,
            touched: Vec::new(),
            trace: None,
        })
    }

    /// Records every consume/complete/sleep/wake event.
    pub fn with_trace(mut self) -> Self {
        self.trace = Some(Vec::new());
        self
    }

    pub fn model(&self) -> &DeviceModel {
        &self.model
    }

    pub fn now(&self) -> u64 {
        self.calendar.now()
    }

    pub fn attach(&mut self, ep: DeviceEndpoint) -> InstanceId {
        let now = self.now();
        let inst = self.instances.len();
        let poll = ep
            .sq_poll()
            .then(|| PollThreadModel::new(now, ep.sq_poll_idle_ns(), self.model.wakeup_cost_ns));
        let has_poll = poll.is_some();
        let idle = ep.sq_poll_idle_ns();
        self.instances.push(Attached {
            ep,
            poll,
            poll_free_at: now,
            timeout_pending: has_poll,
            in_service: 0,
            service_busy_since: 0,
            service_busy_ns: 0,
            last_read_end: None,
            consumed: 0,
            completed: 0,
            touched: false,
        });
        if has_poll {
            self.calendar.schedule(now + idle + 1, Event::PollTimeout { inst });
        }
        inst
    }

    pub fn instance_count(&self) -> usize {
        self.instances.len()
    }

    pub fn next_event_time(&self) -> Option<u64> {
        self.calendar.peek_time()
    }

    /// Operations currently occupying device slots.
    pub fn in_service(&self) -> u32 {
        self.busy_slots
    }

    pub fn poll_thread(&self, inst: InstanceId) -> Option<&PollThreadModel> {
        self.instances[inst].poll.as_ref()
    }

    pub fn poll_busy_ns(&self, inst: InstanceId) -> u64 {
        let now = self.now();
        self.instances[inst]
            .poll
            .as_ref()
            .map_or(0, |p| p.busy_ns_at(now))
    }

    pub fn stats(&self, inst: InstanceId) -> DeviceInstanceStats {
        let a = &self.instances[inst];
        let now = self.now();
        let open = if a.in_service > 0 {
            now.saturating_sub(a.service_busy_since)
        } else {
            0
        };
        DeviceInstanceStats {
            consumed: a.consumed,
            completed: a.completed,
            poll_busy_ns: self.poll_busy_ns(inst),
            service_busy_ns: a.service_busy_ns + open,
        }
    }

    pub fn trace(&self) -> Option<&[TraceEvent]> {
        self.trace.as_deref()
    }

    pub fn take_trace(&mut self) -> Vec<TraceEvent> {
        self.trace.as_mut().map(std::mem::take).unwrap_or_default()
    }

    /// Instances whose CQ received entries since the last call.
    pub fn drain_touched(&mut self, out: &mut Vec<InstanceId>) {
        for inst in self.touched.drain(..) {
            self.instances[inst].touched = false;
            out.push(inst);
        }
    }

    /// True when nothing is in service or waiting in any SQ.
    pub fn is_idle(&self) -> bool {
        self.busy_slots == 0 && self.instances.iter().all(|a| a.ep.pending() == 0)
    }

    /// Processes the next calendar event, advancing the clock to it.
    /// Returns the number of events processed (0 or 1).
    pub fn step(&mut self) -> usize {
        let Some((now, ev)) = self.calendar.pop() else {
            return 0;
        };
        match ev {
            Event::Finish { inst, req, rest } => self.finish(inst, now, req, rest),
            Event::PollTimeout { inst } => self.poll_timeout(inst, now),
            Event::Wake { inst } => {
                let a = &mut self.instances[inst];
                if let Some(p) = a.poll.as_mut() {
                    p.finish_wakeup(now);
                }
                self.record(now, TraceKind::Wake, inst, None, None);
                self.ensure_timeout(inst);
                self.consume(inst, now);
            }
        }
        1
    }

    /// Processes every event due at or before `t`, then moves the clock to `t`.
    pub fn advance_to(&mut self, t: u64) -> usize {
        let mut n = 0;
        while self.calendar.peek_time().is_some_and(|e| e <= t) {
            n += self.step();
        }
        if t > self.now() {
            self.calendar.advance(t);
        }
        n
    }

    /// Lets the poll thread (or doorbell) of `inst` observe its SQ at `now`.
    pub fn kick(&mut self, inst: InstanceId, now: u64) {
        self.advance_to(now);
        self.observe(inst, now);
    }

    pub fn kick_all(&mut self, now: u64) {
        self.advance_to(now);
        for inst in 0..self.instances.len() {
            self.observe(inst, now);
        }
    }

    /// Runs until every submitted request has completed. Returns the time
    /// of the last processed event.
    pub fn run_until_idle(&mut self) -> u64 {
        loop {
            let now = self.now();
            for inst in 0..self.instances.len() {
                self.observe(inst, now);
            }
            if self.is_idle() {
                return self.now();
            }
            if self.step() == 0 {
                return self.now();
            }
        }
    }

    fn observe(&mut self, inst: InstanceId, now: u64) {
        let a = &mut self.instances[inst];
        let pending = a.ep.pending();
        if pending == 0 {
            return;
        }
        let mut woke = false;
        if let Some(p) = a.poll.as_mut() {
            let before = p.state();
            let after = p.tick(now, pending);
            if before == PollState::Asleep && after == PollState::Waking {
                woke = true;
            }
        }
        if woke {
            let at = now + self.model.wakeup_cost_ns;
            self.calendar.schedule(at, Event::Wake { inst });
            return;
        }
        self.ensure_timeout(inst);
        self.consume(inst, now);
    }

    fn ensure_timeout(&mut self, inst: InstanceId) {
        let a = &mut self.instances[inst];
        if let Some(p) = a.poll.as_ref() {
            if p.state() == PollState::Active && !a.timeout_pending {
                a.timeout_pending = true;
                let at = p.sleep_deadline() + 1;
                self.calendar.schedule(at, Event::PollTimeout { inst });
            }
        }
    }

    fn poll_timeout(&mut self, inst: InstanceId, now: u64) {
        let a = &mut self.instances[inst];
        a.timeout_pending = false;
        let backlog = a.ep.pending() > 0;
        let Some(p) = a.poll.as_mut() else { return };
        if p.state() != PollState::Active {
            return;
        }
        if backlog {
            p.note_activity(now);
        }
        if now > p.sleep_deadline() {
            let at = p.sleep_deadline();
            p.fall_asleep();
            self.record(at, TraceKind::Sleep, inst, None, None);
        } else {
            self.ensure_timeout(inst);
        }
    }

    fn consume(&mut self, inst: InstanceId, now: u64) {
        let cost = self.model.submission_cpu_cost_ns;
        while self.busy_slots < self.model.internal_parallelism {
            let a = &mut self.instances[inst];
            if let Some(p) = a.poll.as_ref() {
                if p.state() != PollState::Active {
                    break;
                }
            }
            let Some(req) = a.ep.take_submission() else { break };
            let mut rest = Vec::new();
            if req.link {
                while let Some(next) = a.ep.take_submission() {
                    let more = next.link;
                    rest.push(next);
                    if !more {
                        break;
                    }
                }
            }
            a.consumed += 1 + rest.len() as u64;
            let start = if let Some(p) = a.poll.as_mut() {
                p.note_activity(now);
                a.poll_free_at = a.poll_free_at.max(now).max(req.submit_time) + cost;
                a.poll_free_at
            } else {
                now.max(req.submit_time)
            };
            self.busy_slots += 1;
            let a = &mut self.instances[inst];
            if a.in_service == 0 {
                a.service_busy_since = start;
            }
            a.in_service += 1;
            self.start(inst, start, req, rest);
        }
    }

    /// Puts `req` in service at `start` on an already reserved slot.
    fn start(&mut self, inst: InstanceId, start: u64, req: IoRequest, rest: Vec<IoRequest>) {
        let dur = self.service_time(inst, &req);
        self.record(start, TraceKind::Consume, inst, Some(req.request_id), None);
        self.calendar
            .schedule(start + dur, Event::Finish { inst, req, rest });
    }

    fn service_time(&mut self, inst: InstanceId, req: &IoRequest) -> u64 {
        let mut t = self.model.service_time_ns as f64;
        if req.kind == IoKind::Read {
            let a = &mut self.instances[inst];
            if a.last_read_end != Some(req.offset) {
                t *= self.model.random_read_multiplier;
            }
            a.last_read_end = Some(req.offset + req.length as u64);
        }
        if self.model.jitter > 0.0 {
            let j = self.model.jitter;
            t *= 1.0 + self.rng.gen_range(-j..=j);
        }
        (t.round() as u64).max(1)
    }

    fn finish(&mut self, inst: InstanceId, now: u64, req: IoRequest, mut rest: Vec<IoRequest>) {
        let result = match self.faults.get(&req.request_id) {
            Some(&code) => IoResult::Error(code),
            None => IoResult::Ok(req.length),
        };
        self.post(inst, now, &req, result);
        if !rest.is_empty() {
            if result.is_ok() {
                let next = rest.remove(0);
                self.start(inst, now, next, rest);
                return;
            }
            for r in &rest {
                self.post(inst, now, r, IoResult::Canceled);
            }
        }
        self.busy_slots -= 1;
        let a = &mut self.instances[inst];
        a.in_service -= 1;
        if a.in_service == 0 {
            a.service_busy_ns += now.saturating_sub(a.service_busy_since);
        }
        self.refill(now);
    }

    fn refill(&mut self, now: u64) {
        let n = self.instances.len();
        for k in 0..n {
            if self.busy_slots >= self.model.internal_parallelism {
                break;
            }
            let inst = (self.rr + k) % n;
            self.consume(inst, now);
        }
        self.rr = (self.rr + 1) % n.max(1);
    }

    fn post(&mut self, inst: InstanceId, now: u64, req: &IoRequest, result: IoResult) {
        let c = Completion {
            request_id: req.request_id,
            user_data: req.user_data,
            result,
            submit_time: req.submit_time,
            complete_time: now,
        };
        let a = &mut self.instances[inst];
        if a.ep.post_completion(c).is_err() {
            panic!("CQ of instance {inst} overflowed; the submission bound was violated");
        }
        a.completed += 1;
        if !a.touched {
            a.touched = true;
            self.touched.push(inst);
        }
        self.record(now, TraceKind::Complete, inst, Some(req.request_id), Some(result));
    }

    fn record(
        &mut self,
        time_ns: u64,
        kind: TraceKind,
        instance_id: InstanceId,
        request_id: Option<u64>,
        result: Option<IoResult>,
    ) {
        if let Some(t) = self.trace.as_mut() {
            t.push(TraceEvent {
                time_ns,
                kind,
                instance_id,
                request_id,
                result,
            });
        }
    }
}

impl Backend for SimDevice {
    fn geometry(&self) -> Geometry {
        self.model.geometry()
    }

    fn attach(&mut self, endpoint: DeviceEndpoint) -> InstanceId {
        SimDevice::attach(self, endpoint)
    }

    fn service(&mut self, now_ns: u64) -> usize {
        let now = now_ns.max(self.now());
        let n = self.advance_to(now);
        self.kick_all(now);
        n
    }

    fn is_idle(&self) -> bool {
        SimDevice::is_idle(self)
    }
}
