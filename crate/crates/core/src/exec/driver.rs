use std::sync::atomic::{AtomicBool, Ordering};
use std::thread;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::actor::{Actor, ActorId, Cx, Step};
use super::ExecError;
use crate::clock::ClockSource;
use crate::ring::{thread_tag, Backend, InstanceId};
use crate::sim::calendar::EventCalendar;
use crate::sim::SimDevice;

/// Tag the ring instrumentation sees while the device runs.
pub const DEVICE_TAG: u32 = 1 << 20;

/// Tag of a logical actor thread.
pub fn actor_tag(id: ActorId) -> u32 {
    id as u32 + 1
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum State {
    Scheduled,
    Idle { busy_until: u64 },
    Waiting { busy_until: u64 },
    Done,
}

struct Slot<'a> {
    actor: Box<dyn Actor + 'a>,
    state: State,
    generation: u64,
    primary: bool,
}

/// Runs actors and a [`SimDevice`] on one thread in virtual time.
///
/// Device events and actor steps are merged by timestamp; on ties the
/// device goes first. The run ends when every primary actor is done.
pub struct VirtualDriver<'a> {
    clock: ClockSource,
    device: &'a mut SimDevice,
    slots: Vec<Slot<'a>>,
    calendar: EventCalendar<(ActorId, u64)>,
    listeners: Vec<Vec<ActorId>>,
    rng: ChaCha8Rng,
    jitter: f64,
    notify_buf: Vec<ActorId>,
    kick_buf: Vec<InstanceId>,
    touched_buf: Vec<InstanceId>,
    steps: u64,
    limit_ns: u64,
}

impl<'a> VirtualDriver<'a> {
    pub fn new(clock: ClockSource, device: &'a mut SimDevice, seed: u64) -> Self {
        assert!(clock.is_virtual(), "virtual driver needs a virtual clock");
        VirtualDriver {
            clock,
            device,
            slots: Vec::new(),
            calendar: EventCalendar::new(),
            listeners: Vec::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
            jitter: 0.0,
            notify_buf: Vec::new(),
            kick_buf: Vec::new(),
            touched_buf: Vec::new(),
            steps: 0,
            limit_ns: u64::MAX,
        }
    }

    /// Scales every charged step duration by a random factor in
    /// `[1, 1 + jitter]`, which shuffles interleavings between seeds.
    pub fn with_jitter(mut self, jitter: f64) -> Self {
        self.jitter = jitter;
        self
    }

    /// Gives up with [`ExecError::Stalled`] once virtual time would pass
    /// `limit_ns`; guards against runs kept alive only by periodic actors.
    pub fn with_time_limit(mut self, limit_ns: u64) -> Self {
        self.limit_ns = limit_ns;
        self
    }

    fn stuck(&self) -> Vec<String> {
        self.slots
            .iter()
            .enumerate()
            .filter(|(_, s)| s.primary && s.state != State::Done)
            .map(|(i, s)| format!("{}#{i}", s.actor.name()))
            .collect()
    }

    pub fn device(&mut self) -> &mut SimDevice {
        self.device
    }

    /// Adds an actor, scheduled at the current time. Returns its id.
    pub fn spawn(&mut self, actor: Box<dyn Actor + 'a>, primary: bool) -> ActorId {
        let id = self.slots.len();
        self.slots.push(Slot {
            actor,
            state: State::Scheduled,
            generation: 0,
            primary,
        });
        self.calendar.schedule(self.calendar.now(), (id, 0));
        id
    }

    /// `actor` is notified whenever the device posts to `instance`'s CQ.
    pub fn listen(&mut self, instance: InstanceId, actor: ActorId) {
        if self.listeners.len() <= instance {
            self.listeners.resize(instance + 1, Vec::new());
        }
        self.listeners[instance].push(actor);
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    fn wake(&mut self, id: ActorId, now: u64) {
        let slot = &mut self.slots[id];
        let at = match slot.state {
            State::Idle { busy_until } | State::Waiting { busy_until } => busy_until.max(now),
            State::Scheduled | State::Done => return,
        };
        slot.generation += 1;
        slot.state = State::Scheduled;
        self.calendar.schedule(at, (id, slot.generation));
    }

    fn flush_notifications(&mut self, now: u64) {
        let mut buf = std::mem::take(&mut self.notify_buf);
        for id in buf.drain(..) {
            self.wake(id, now);
        }
        self.notify_buf = buf;
    }

    fn deliver_device_activity(&mut self) {
        let now = self.calendar.now().max(self.device.now());
        let mut touched = std::mem::take(&mut self.touched_buf);
        self.device.drain_touched(&mut touched);
        for inst in touched.drain(..) {
            if let Some(ls) = self.listeners.get(inst) {
                self.notify_buf.extend_from_slice(ls);
            }
        }
        self.touched_buf = touched;
        self.flush_notifications(now);
    }

    /// Runs until every primary actor is done. Returns the finishing time.
    pub fn run(&mut self) -> Result<u64, ExecError> {
        let mut primaries = self.slots.iter().filter(|s| s.primary).count();
        let mut last = self.calendar.now();
        while primaries > 0 {
            let td = self.device.next_event_time();
            let ta = self.calendar.peek_time();
            let next = match (td, ta) {
                (Some(d), Some(a)) => Some(d.min(a)),
                (d, a) => d.or(a),
            };
            if next.map_or(true, |t| t > self.limit_ns) {
                return Err(ExecError::Stalled {
                    at_ns: self.clock.now_ns(),
                    waiting: self.stuck(),
                });
            }
            match (td, ta) {
                (None, None) => unreachable!(),
                (Some(d), a) if a.map_or(true, |a| d <= a) => {
                    self.clock.set(d.max(self.clock.now_ns()));
                    thread_tag::set(DEVICE_TAG);
                    self.device.step();
                    self.deliver_device_activity();
                }
                _ => {
                    let (t, (id, generation)) = self.calendar.pop().expect("peeked");
                    if self.slots[id].generation != generation || self.slots[id].state == State::Done {
                        continue;
                    }
                    self.clock.set(t);
                    thread_tag::set(actor_tag(id));
                    let outcome = {
                        let mut cx = Cx::new(id, &self.clock, &mut self.notify_buf, &mut self.kick_buf);
                        let r = self.slots[id].actor.step(&mut cx);
                        (r, cx.charged())
                    };
                    self.steps += 1;
                    let (r, mut cost) = outcome;
                    if self.jitter > 0.0 && cost > 0 {
                        cost += (cost as f64 * self.rng.gen_range(0.0..self.jitter)) as u64;
                    }
                    let slot = &mut self.slots[id];
                    match r {
                        Step::Continue => {
                            slot.state = State::Scheduled;
                            self.calendar.schedule(t + cost.max(1), (id, slot.generation));
                        }
                        Step::Idle => {
                            slot.state = State::Idle { busy_until: t + cost };
                        }
                        Step::WaitUntil(w) => {
                            slot.state = State::Waiting { busy_until: t + cost };
                            self.calendar
                                .schedule(w.max(t + cost), (id, slot.generation));
                        }
                        Step::Done => {
                            slot.state = State::Done;
                            if slot.primary {
                                primaries -= 1;
                                last = t + cost;
                            }
                        }
                    }
                    if !self.kick_buf.is_empty() {
                        thread_tag::set(DEVICE_TAG);
                        let mut kicks = std::mem::take(&mut self.kick_buf);
                        kicks.sort_unstable();
                        kicks.dedup();
                        for inst in kicks.drain(..) {
                            self.device.kick(inst, t);
                        }
                        self.kick_buf = kicks;
                        self.deliver_device_activity();
                    }
                    self.flush_notifications(t);
                }
            }
        }
        thread_tag::set(0);
        Ok(last)
    }

    /// Collects every actor's report contribution.
    pub fn report(&self, out: &mut crate::metrics::MetricsReport) {
        for s in &self.slots {
            s.actor.report(out);
        }
    }

    pub fn into_actors(self) -> Vec<Box<dyn Actor + 'a>> {
        self.slots.into_iter().map(|s| s.actor).collect()
    }
}

/// Outcome of [`run_wall`].
pub struct WallRun<B> {
    pub backend: B,
    pub actors: Vec<Box<dyn Actor>>,
    pub end_ns: u64,
}

/// Runs every actor on its own OS thread and the backend on another, until
/// all primary actors are done or `deadline` passes.
pub fn run_wall<B: Backend + 'static>(
    clock: ClockSource,
    mut backend: B,
    actors: Vec<(Box<dyn Actor>, bool)>,
    deadline: Duration,
) -> Result<WallRun<B>, ExecError> {
    assert!(!clock.is_virtual(), "wall driver needs a wall clock");
    let stop = AtomicBool::new(false);
    let device_stop = AtomicBool::new(false);
    let primaries_left = std::sync::atomic::AtomicUsize::new(actors.iter().filter(|(_, p)| *p).count());
    let started = Instant::now();
    let timed_out = AtomicBool::new(false);
    let (actors_back, backend, end_ns) = thread::scope(|s| {
        let dev = s.spawn(|| {
            thread_tag::set(DEVICE_TAG);
            while !device_stop.load(Ordering::Acquire) {
                if backend.service(clock.now_ns()) == 0 {
                    thread::yield_now();
                }
            }
            backend
        });
        let mut handles = Vec::new();
        for (id, (mut actor, primary)) in actors.into_iter().enumerate() {
            let clock = &clock;
            let stop = &stop;
            let primaries_left = &primaries_left;
            handles.push(s.spawn(move || {
                thread_tag::set(actor_tag(id));
                let mut notify = Vec::new();
                let mut kick = Vec::new();
                loop {
                    if stop.load(Ordering::Acquire) {
                        break;
                    }
                    let r = {
                        let mut cx = Cx::new(id, clock, &mut notify, &mut kick);
                        actor.step(&mut cx)
                    };
                    notify.clear();
                    kick.clear();
                    match r {
                        Step::Continue => {}
                        Step::Idle => thread::yield_now(),
                        Step::WaitUntil(t) => {
                            let now = clock.now_ns();
                            if t > now + 200_000 {
                                thread::sleep(Duration::from_nanos((t - now) / 2));
                            } else {
                                thread::yield_now();
                            }
                        }
                        Step::Done => {
                            if primary && primaries_left.fetch_sub(1, Ordering::AcqRel) == 1 {
                                stop.store(true, Ordering::Release);
                            }
                            break;
                        }
                    }
                }
                thread_tag::set(0);
                actor
            }));
        }
        // Watchdog: the caller's thread enforces the deadline.
        while !stop.load(Ordering::Acquire) {
            if started.elapsed() > deadline {
                timed_out.store(true, Ordering::Release);
                stop.store(true, Ordering::Release);
                break;
            }
            thread::sleep(Duration::from_micros(200));
        }
        let end_ns = clock.now_ns();
        let actors_back: Vec<Box<dyn Actor>> = handles
            .into_iter()
            .map(|h| h.join().expect("actor thread panicked"))
            .collect();
        device_stop.store(true, Ordering::Release);
        let backend = dev.join().expect("device thread panicked");
        (actors_back, backend, end_ns)
    });
    if timed_out.load(Ordering::Acquire) {
        return Err(ExecError::TimeoutExceeded {
            abandoned: primaries_left.load(Ordering::Acquire) as u64,
        });
    }
    Ok(WallRun {
        backend,
        actors: actors_back,
        end_ns,
    })
}
