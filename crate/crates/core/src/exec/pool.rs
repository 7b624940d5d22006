use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

use super::actor::{Actor, Cx, Step};
use super::dispatch::{DispatchLayer, Policy, DEFAULT_INBOX_CAPACITY};
use super::driver::{actor_tag, DEVICE_TAG};
use super::handle::{InlineWork, RequestHandle};
use super::unit::spawn_unit;
use super::{CostModel, ExecError, Threading};
use crate::clock::ClockSource;
use crate::metrics::{InstanceMetrics, MetricsReport};
use crate::ring::{thread_tag, ApiInstance, Backend, IoRequest, RingConfig};
use crate::sim::{DeviceModel, SimDevice};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PoolConfig {
    pub instances: usize,
    pub threading: Threading,
    pub policy: Policy,
    pub inbox_capacity: usize,
    pub ring: RingConfig,
    pub cost: CostModel,
    /// No I/O threads: callers drive instances with [`IoPool::tick`].
    pub cooperative: bool,
    pub seed: u64,
    pub run_id: u64,
}

impl Default for PoolConfig {
    fn default() -> Self {
        PoolConfig {
            instances: 1,
            threading: Threading::SingleThread,
            policy: Policy::RoundRobin,
            inbox_capacity: DEFAULT_INBOX_CAPACITY,
            ring: RingConfig::default(),
            cost: CostModel::default(),
            cooperative: false,
            seed: 0,
            run_id: 0,
        }
    }
}

type UnitActors = Mutex<Vec<Box<dyn Actor>>>;

/// A static I/O thread pool on real threads over a simulated device.
///
/// Any thread may [`submit`](Self::submit) and poll the returned handles.
pub struct IoPool {
    layer: Arc<DispatchLayer>,
    clock: ClockSource,
    units: Vec<Arc<UnitActors>>,
    unit_threads: Vec<JoinHandle<()>>,
    stop: Arc<AtomicBool>,
    device_stop: Arc<AtomicBool>,
    device: Option<JoinHandle<SimDevice>>,
    run_id: u64,
}

fn unit_loop(actors: &UnitActors, first_id: usize, clock: &ClockSource, stop: &AtomicBool) {
    let mut notify = Vec::new();
    let mut kick = Vec::new();
    let mut done = vec![false; actors.lock().len()];
    while !stop.load(Ordering::Acquire) && done.iter().any(|d| !d) {
        let mut progressed = false;
        let mut g = actors.lock();
        for (i, a) in g.iter_mut().enumerate() {
            if done[i] {
                continue;
            }
            thread_tag::set(actor_tag(first_id + i));
            let mut cx = Cx::new(first_id + i, clock, &mut notify, &mut kick);
            match a.step(&mut cx) {
                Step::Continue => progressed = true,
                Step::Done => done[i] = true,
                Step::Idle | Step::WaitUntil(_) => {}
            }
            notify.clear();
            kick.clear();
        }
        drop(g);
        if !progressed {
            thread::yield_now();
        }
    }
    thread_tag::set(0);
}

impl IoPool {
    pub fn start(cfg: PoolConfig, model: DeviceModel) -> Result<Self, ExecError> {
        cfg.ring.validate()?;
        model.validate()?;
        if cfg.instances == 0 || cfg.inbox_capacity == 0 {
            return Err(ExecError::Config("pool needs instances and inbox capacity".into()));
        }
        let clock = ClockSource::wall();
        let mut device = SimDevice::new(model.clone(), cfg.seed)?;
        let layer = Arc::new(DispatchLayer::new(cfg.instances, cfg.inbox_capacity, cfg.policy));
        let stop = Arc::new(AtomicBool::new(false));
        let device_stop = Arc::new(AtomicBool::new(false));
        let mut units = Vec::new();
        // Actor ids start past anything a caller is likely to use as an owner.
        let mut next_id = 1 << 16;
        let mut firsts = Vec::new();
        for i in 0..cfg.instances {
            let (inst, ep) = ApiInstance::new(&cfg.ring, model.geometry(), clock.clone())?;
            let dev_id = device.attach(ep);
            let (actors, _) = spawn_unit(
                i,
                dev_id,
                inst,
                layer.clone(),
                cfg.threading,
                cfg.cost.clone(),
                next_id,
                true,
            );
            firsts.push(next_id);
            next_id += actors.len();
            units.push(Arc::new(Mutex::new(actors)));
        }
        let ds = device_stop.clone();
        let dclock = clock.clone();
        let device = thread::spawn(move || {
            thread_tag::set(DEVICE_TAG);
            while !ds.load(Ordering::Acquire) {
                if device.service(dclock.now_ns()) == 0 {
                    thread::yield_now();
                }
            }
            device
        });
        let mut unit_threads = Vec::new();
        if !cfg.cooperative {
            for (u, first) in units.iter().zip(firsts) {
                let u = u.clone();
                let clock = clock.clone();
                let stop = stop.clone();
                unit_threads.push(thread::spawn(move || unit_loop(&u, first, &clock, &stop)));
            }
        }
        Ok(IoPool {
            layer,
            clock,
            units,
            unit_threads,
            stop,
            device_stop,
            device: Some(device),
            run_id: cfg.run_id,
        })
    }

    pub fn layer(&self) -> &DispatchLayer {
        &self.layer
    }

    pub fn submit(&self, req: IoRequest) -> Result<RequestHandle, ExecError> {
        self.submit_with(req, None)
    }

    /// Submits with post-I/O work to run on the reaping I/O thread.
    pub fn submit_with(&self, req: IoRequest, inline: Option<InlineWork>) -> Result<RequestHandle, ExecError> {
        let mut notify = Vec::new();
        let mut kick = Vec::new();
        let mut cx = Cx::new(usize::MAX, &self.clock, &mut notify, &mut kick);
        self.layer.submit(req, None, inline, &mut cx)
    }

    /// One submit/reap cycle of `instance` on the caller's thread
    /// (cooperative mode). Returns true if it made progress.
    pub fn tick(&self, instance: usize) -> bool {
        let mut notify = Vec::new();
        let mut kick = Vec::new();
        let mut g = self.units[instance].lock();
        let mut progressed = false;
        for a in g.iter_mut() {
            let mut cx = Cx::new(usize::MAX - 1, &self.clock, &mut notify, &mut kick);
            progressed |= a.step(&mut cx) == Step::Continue;
        }
        progressed
    }

    fn settled(&self) -> bool {
        self.layer.handles_completed() >= self.layer.handles_created()
    }

    /// Refuses new work, finishes everything queued or in flight and stops
    /// all threads. Past `deadline` the remaining requests are abandoned.
    pub fn drain_and_shutdown(mut self, deadline: Duration) -> Result<MetricsReport, ExecError> {
        self.layer.shut_down();
        let start = Instant::now();
        let cooperative = self.unit_threads.is_empty();
        while !self.settled() && start.elapsed() < deadline {
            if cooperative {
                let mut any = false;
                for i in 0..self.units.len() {
                    any |= self.tick(i);
                }
                if !any {
                    thread::yield_now();
                }
            } else {
                thread::sleep(Duration::from_micros(100));
            }
        }
        let timed_out = !self.settled();
        if timed_out {
            self.stop.store(true, Ordering::Release);
        }
        for t in self.unit_threads.drain(..) {
            t.join().expect("I/O thread panicked");
        }
        self.device_stop.store(true, Ordering::Release);
        let device = self.device.take().expect("device thread").join().expect("device thread panicked");
        if timed_out {
            return Err(ExecError::TimeoutExceeded {
                abandoned: self.layer.handles_created() - self.layer.handles_completed(),
            });
        }
        let mut report = MetricsReport::new(self.run_id);
        for u in &self.units {
            for a in u.lock().iter() {
                a.report(&mut report);
            }
        }
        let span = self.clock.now_ns().max(1) as f64;
        for i in 0..device.instance_count() {
            let st = device.stats(i);
            report.per_instance.push(InstanceMetrics {
                instance: i,
                utilization: (st.service_busy_ns as f64 / span).min(1.0),
                poll_busy_ns: device.poll_busy_ns(i),
                inbox_peak: self.layer.inbox_peak(i),
                submitted: st.consumed,
            });
        }
        report.inactive_deliveries = self.layer.inactive_deliveries();
        report.duplicate_completions = self.layer.duplicate_completions();
        Ok(report)
    }
}

impl Drop for IoPool {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::Release);
        for t in self.unit_threads.drain(..) {
            let _ = t.join();
        }
        self.device_stop.store(true, Ordering::Release);
        if let Some(d) = self.device.take() {
            let _ = d.join();
        }
    }
}
