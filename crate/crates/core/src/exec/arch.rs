use std::collections::BTreeMap;
use std::sync::atomic::AtomicU64;
use std::sync::Arc;
use std::time::Duration;

use parking_lot::Mutex;

use super::actor::{Actor, ActorId};
use super::controller::{ControllerConfig, ScalingController};
use super::dispatch::DispatchLayer;
use super::driver::{run_wall, VirtualDriver};
use super::unit::spawn_unit;
use super::worker::{DepState, PoolPort, Port, PrivatePort, SharedInstance, SharedPort, Sink, Worker, WorkerConfig};
use super::workload::Workload;
use super::{Architecture, ArchConfig, ClockMode, ExecError, ExecMode};
use crate::clock::ClockSource;
use crate::metrics::{InstanceMetrics, MetricsReport};
use crate::partition::Scheme;
use crate::ring::{ApiInstance, Backend, InstanceId};
use crate::sim::{DeviceModel, SimDevice, TraceEvent};

/// Everything a finished run produced.
#[derive(Debug)]
pub struct RunOutcome {
    pub report: MetricsReport,
    /// Final state per task id; filled when the workload collects states.
    pub final_states: BTreeMap<u64, Vec<u8>>,
    /// Pool handles created and completed (zero for the other architectures).
    pub handles_created: u64,
    pub handles_completed: u64,
    /// Time the last worker finished.
    pub end_ns: u64,
    /// Device events, when [`ArchConfig::trace`] is set.
    pub trace: Vec<TraceEvent>,
}

struct Plan {
    actors: Vec<(Box<dyn Actor>, bool)>,
    listeners: Vec<(InstanceId, ActorId)>,
    layer: Option<Arc<DispatchLayer>>,
}

fn plan(
    work: &Arc<Workload>,
    cfg: &ArchConfig,
    device: &mut dyn Backend,
    clock: &ClockSource,
    sink: &Arc<Mutex<Sink>>,
) -> Result<Plan, ExecError> {
    let geometry = device.geometry();
    let n = cfg.workers;
    let deps = if work.deps.is_empty() {
        None
    } else {
        Some(Arc::new(DepState::new(work.task_count() as usize, &work.deps)))
    };
    let worker_cfg = |index| WorkerConfig {
        index,
        workers: n,
        scheme: cfg.scheme,
        geometry,
        cost: cfg.cost.clone(),
        run_id: cfg.run_id,
    };
    let mut instances = Vec::new();
    for _ in 0..cfg.instance_count() {
        let (inst, ep) = ApiInstance::new(&cfg.ring, geometry, clock.clone())?;
        let id = device.attach(ep);
        instances.push((id, inst));
    }
    let mut actors: Vec<(Box<dyn Actor>, bool)> = Vec::new();
    let mut listeners = Vec::new();
    let mut layer = None;
    match cfg.architecture {
        Architecture::SharedNothing => {
            for (w, (id, inst)) in instances.into_iter().enumerate() {
                let (sub, rea) = inst.split();
                let port = Port::Private(PrivatePort::new(id, sub, rea));
                actors.push((
                    Box::new(Worker::new(worker_cfg(w), port, work.clone(), deps.clone(), sink.clone())),
                    true,
                ));
                listeners.push((id, w));
            }
        }
        Architecture::DirectAccess => {
            let shared: Arc<[SharedInstance]> = instances
                .into_iter()
                .map(|(id, inst)| {
                    let probe = inst.probe();
                    let (sub, rea) = inst.split();
                    SharedInstance::new(id, probe, sub, rea)
                })
                .collect();
            let signals: Arc<[AtomicU64]> = (0..n).map(|_| AtomicU64::new(0)).collect();
            for w in 0..n {
                let port = Port::Shared(SharedPort::new(shared.clone(), signals.clone(), w));
                actors.push((
                    Box::new(Worker::new(worker_cfg(w), port, work.clone(), deps.clone(), sink.clone())),
                    true,
                ));
                for i in 0..shared.len() {
                    listeners.push((i, w));
                }
            }
        }
        Architecture::StaticPool | Architecture::DynamicPool => {
            let l = Arc::new(DispatchLayer::new(cfg.instances, cfg.inbox_capacity, cfg.policy));
            for w in 0..n {
                let port = Port::Pool(PoolPort::new(l.clone(), cfg.exec_mode));
                actors.push((
                    Box::new(Worker::new(worker_cfg(w), port, work.clone(), deps.clone(), sink.clone())),
                    true,
                ));
            }
            for (i, (id, inst)) in instances.into_iter().enumerate() {
                let first = actors.len();
                let (unit, handles) =
                    spawn_unit(i, id, inst, l.clone(), cfg.threading, cfg.cost.clone(), first, false);
                actors.extend(unit.into_iter().map(|a| (a, false)));
                listeners.push((id, handles.reaper));
            }
            if cfg.architecture == Architecture::DynamicPool {
                let target = cfg.controller.target_for(cfg.ring.sq_entries);
                actors.push((Box::new(ScalingController::new(&cfg.controller, target, l.clone())), false));
            }
            layer = Some(l);
        }
    }
    Ok(Plan {
        actors,
        listeners,
        layer,
    })
}

/// Runs `work` under `cfg` against a simulated device built from `model`.
pub fn run(work: Workload, cfg: &ArchConfig, model: &DeviceModel) -> Result<RunOutcome, ExecError> {
    model.validate()?;
    check(&work, cfg)?;
    let work = Arc::new(work);
    let sink = Arc::new(Mutex::new(Sink::default()));
    let mut report = MetricsReport::new(cfg.run_id);
    let new_device = || -> Result<SimDevice, ExecError> {
        let d = SimDevice::new(model.clone(), cfg.seed)?;
        Ok(if cfg.trace { d.with_trace() } else { d })
    };
    let (mut device, end_ns, layer) = match cfg.clock {
        ClockMode::Virtual => {
            let clock = ClockSource::virtual_clock();
            let mut device = new_device()?;
            let p = plan(&work, cfg, &mut device, &clock, &sink)?;
            let end = {
                let mut driver = VirtualDriver::new(clock, &mut device, cfg.seed)
                    .with_jitter(cfg.cost.jitter)
                    .with_time_limit(cfg.virtual_limit_ns);
                for (a, primary) in p.actors {
                    driver.spawn(a, primary);
                }
                for (inst, actor) in p.listeners {
                    driver.listen(inst, actor);
                }
                let end = driver.run()?;
                driver.report(&mut report);
                end
            };
            (device, end, p.layer)
        }
        ClockMode::Wall => {
            let clock = ClockSource::wall();
            let mut device = new_device()?;
            let p = plan(&work, cfg, &mut device, &clock, &sink)?;
            let done = run_wall(clock, device, p.actors, Duration::from_millis(cfg.wall_deadline_ms))?;
            for a in &done.actors {
                a.report(&mut report);
            }
            (done.backend, done.end_ns, p.layer)
        }
    };
    let span = end_ns.max(1) as f64;
    for i in 0..device.instance_count() {
        let st = device.stats(i);
        report.per_instance.push(InstanceMetrics {
            instance: i,
            utilization: (st.service_busy_ns as f64 / span).min(1.0),
            poll_busy_ns: device.poll_busy_ns(i),
            inbox_peak: layer.as_ref().map_or(0, |l| l.inbox_peak(i)),
            submitted: st.consumed,
        });
    }
    let mut out = finish(report, &sink, layer, end_ns)?;
    out.trace = device.take_trace();
    Ok(out)
}

/// Runs `work` on real threads against an arbitrary backend, such as the
/// native one. `cfg.clock` is ignored. Per-instance device accounting is
/// left empty.
pub fn run_on_backend<B: Backend + 'static>(
    work: Workload,
    cfg: &ArchConfig,
    mut backend: B,
) -> Result<(RunOutcome, B), ExecError> {
    check(&work, cfg)?;
    let work = Arc::new(work);
    let sink = Arc::new(Mutex::new(Sink::default()));
    let mut report = MetricsReport::new(cfg.run_id);
    let clock = ClockSource::wall();
    let p = plan(&work, cfg, &mut backend, &clock, &sink)?;
    let done = run_wall(clock, backend, p.actors, Duration::from_millis(cfg.wall_deadline_ms))?;
    for a in &done.actors {
        a.report(&mut report);
    }
    let out = finish(report, &sink, p.layer, done.end_ns)?;
    Ok((out, done.backend))
}

fn check(work: &Workload, cfg: &ArchConfig) -> Result<(), ExecError> {
    cfg.validate()?;
    work.validate()?;
    if cfg.architecture == Architecture::SharedNothing {
        if let Some(&(before, after)) = work
            .deps
            .iter()
            .find(|(b, a)| b % cfg.workers != a % cfg.workers)
        {
            return Err(ExecError::WorkloadNotPartitionable { before, after });
        }
    }
    Ok(())
}

fn finish(
    mut report: MetricsReport,
    sink: &Mutex<Sink>,
    layer: Option<Arc<DispatchLayer>>,
    end_ns: u64,
) -> Result<RunOutcome, ExecError> {
    let mut sink = std::mem::take(&mut *sink.lock());
    if let Some(e) = sink.errors.drain(..).next() {
        return Err(e);
    }
    let (mut created, mut completed) = (0, 0);
    if let Some(l) = &layer {
        report.inactive_deliveries += l.inactive_deliveries();
        report.duplicate_completions += l.duplicate_completions();
        created = l.handles_created();
        completed = l.handles_completed();
        if report.active_instance_timeline.is_empty() {
            report.active_instance_timeline.push((0, l.instances()));
        }
    }
    Ok(RunOutcome {
        report,
        final_states: sink.states.into_iter().collect(),
        handles_created: created,
        handles_completed: completed,
        end_ns,
        trace: Vec::new(),
    })
}

/// Every worker owns a private instance and runs its shard inline.
pub fn run_shared_nothing(
    work: Workload,
    threads: usize,
    scheme: Scheme,
    model: &DeviceModel,
) -> Result<RunOutcome, ExecError> {
    let mut cfg = ArchConfig::new(Architecture::SharedNothing, threads, threads);
    cfg.scheme = scheme;
    run(work, &cfg, model)
}

/// `workers` threads share `instances` locked API instances.
pub fn run_direct_access(
    work: Workload,
    workers: usize,
    instances: usize,
    model: &DeviceModel,
) -> Result<RunOutcome, ExecError> {
    run(work, &ArchConfig::new(Architecture::DirectAccess, workers, instances), model)
}

pub fn run_static_pool(
    work: Workload,
    workers: usize,
    instances: usize,
    scheme: Scheme,
    exec_mode: ExecMode,
    model: &DeviceModel,
) -> Result<RunOutcome, ExecError> {
    let mut cfg = ArchConfig::new(Architecture::StaticPool, workers, instances);
    cfg.scheme = scheme;
    cfg.exec_mode = exec_mode;
    run(work, &cfg, model)
}

/// Dynamic pool; full partitioning as its primary scheme.
pub fn run_dynamic_pool(
    work: Workload,
    workers: usize,
    instances: usize,
    controller: ControllerConfig,
    model: &DeviceModel,
) -> Result<RunOutcome, ExecError> {
    let mut cfg = ArchConfig::new(Architecture::DynamicPool, workers, instances);
    cfg.controller = controller;
    run(work, &cfg, model)
}
