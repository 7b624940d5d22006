use std::fmt::Write as _;

use aioarch::exec::{
    run, run_on_backend, ArchConfig, Architecture, ExecMode, FioPattern, LoadProfile, RunOutcome, Workload,
};
use aioarch::metrics::MetricsReport;
use aioarch::native::NativeBackend;
use aioarch::sim::TraceEvent;

use crate::config::{BackendKind, ExperimentConfig};
use crate::BenchError;

/// One measured run.
#[derive(Clone, Debug)]
pub struct Sample {
    pub series: String,
    /// Queue depth or callback cost, depending on the sweep.
    pub x: u64,
    pub run: usize,
    /// Closed-form expectation; `None` on the native backend.
    pub expected_iops: Option<f64>,
    pub report: MetricsReport,
}

#[derive(Clone, Debug, Default)]
pub struct SweepOutput {
    pub samples: Vec<Sample>,
    /// Device events of the first measured run, when tracing was asked for.
    pub trace: Option<Vec<TraceEvent>>,
}

/// Seed of measured run `run`; the preconditioning run uses `run = usize::MAX`.
pub fn run_seed(base: u64, run: usize) -> u64 {
    let mut z = base ^ (run as u64).wrapping_add(1).wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    (z ^ (z >> 31)) & (i64::MAX as u64)
}

fn execute(cfg: &ExperimentConfig, arch: &ArchConfig, work: Workload) -> Result<RunOutcome, BenchError> {
    match cfg.backend.kind {
        BackendKind::Sim => Ok(run(work, arch, &cfg.backend.device)?),
        BackendKind::Native => {
            let backend = NativeBackend::open(&cfg.backend.native)?;
            Ok(run_on_backend(work, arch, backend)?.0)
        }
    }
}

fn arch_for(cfg: &ExperimentConfig, run: usize, trace: bool) -> ArchConfig {
    let mut a = cfg.architecture.clone();
    a.seed = run_seed(cfg.seed, run);
    a.run_id = run as u64;
    a.trace = trace && cfg.backend.kind == BackendKind::Sim;
    a
}

fn fio(cfg: &ExperimentConfig, pattern: FioPattern, ops: u64, qd: usize, cost: u64, seed: u64) -> Workload {
    Workload::fio(pattern, ops, cfg.blocks(), qd, cost, seed)
}

/// Requests the architecture keeps in flight at per-worker depth `qd`.
fn inflight(cfg: &ExperimentConfig, qd: usize) -> u32 {
    (qd * cfg.architecture.workers).min(u32::MAX as usize) as u32
}

/// Measures `runs` runs per point, each preceded by a discarded
/// preconditioning run when configured.
fn sweep<F>(cfg: &ExperimentConfig, trace: bool, points: Vec<(String, u64)>, mut one: F) -> Result<SweepOutput, BenchError>
where
    F: FnMut(&str, u64, &ArchConfig) -> Result<(RunOutcome, Option<f64>), BenchError>,
{
    let mut out = SweepOutput::default();
    for (series, x) in points {
        if cfg.precondition {
            one(&series, x, &arch_for(cfg, usize::MAX, false))?;
        }
        for r in 0..cfg.runs {
            let want_trace = trace && out.trace.is_none();
            let (o, expected_iops) = one(&series, x, &arch_for(cfg, r, want_trace))?;
            if want_trace {
                out.trace = Some(o.trace);
            }
            out.samples.push(Sample {
                series: series.clone(),
                x,
                run: r,
                expected_iops,
                report: o.report,
            });
        }
    }
    Ok(out)
}

/// IOPS against queue depth, with the Little's-law prediction in sim mode.
pub fn sweep_qd(cfg: &ExperimentConfig, trace: bool) -> Result<SweepOutput, BenchError> {
    cfg.validate()?;
    let points = cfg.sweep.qd_list.iter().map(|&q| (String::from("measured"), q as u64)).collect();
    sweep(cfg, trace, points, |_, qd, arch| {
        let work = fio(cfg, cfg.workload.op_kind, cfg.workload.op_count, qd as usize, cfg.workload.callback_cost_ns, arch.seed);
        let o = execute(cfg, arch, work)?;
        let predicted = (cfg.backend.kind == BackendKind::Sim)
            .then(|| cfg.backend.device.steady_state_iops(inflight(cfg, qd as usize)));
        Ok((o, predicted))
    })
}

/// Throughput ceiling if only device parallelism and `consumers` threads
/// each spending `cost_ns` per completion limited it.
pub fn callback_oracle(cfg: &ExperimentConfig, mode: ExecMode, cost_ns: u64) -> f64 {
    let device = cfg.backend.device.steady_state_iops(inflight(cfg, cfg.workload.queue_depth));
    if cost_ns == 0 {
        return device;
    }
    let consumers = match mode {
        ExecMode::InlineCallbacks => cfg.architecture.instance_count(),
        ExecMode::IoThreads => cfg.architecture.workers,
    };
    device.min(consumers as f64 * 1e9 / cost_ns as f64)
}

pub fn mode_name(mode: ExecMode) -> &'static str {
    match mode {
        ExecMode::InlineCallbacks => "inline_callbacks",
        ExecMode::IoThreads => "io_threads",
    }
}

/// Random reads with a post-I/O callback of each listed cost, in both
/// execution modes.
pub fn sweep_callback(cfg: &ExperimentConfig, trace: bool) -> Result<SweepOutput, BenchError> {
    cfg.validate()?;
    if !cfg.architecture.architecture.is_pool() {
        return Err(BenchError::ConfigInvalid {
            path: "architecture.architecture".into(),
            msg: "sweep-callback needs static_pool or dynamic_pool".into(),
        });
    }
    let modes = [ExecMode::InlineCallbacks, ExecMode::IoThreads];
    let points = modes
        .iter()
        .flat_map(|&m| cfg.sweep.cost_list_ns.iter().map(move |&c| (mode_name(m).to_string(), c)))
        .collect();
    sweep(cfg, trace, points, |series, cost, arch| {
        let mode = if series == mode_name(ExecMode::InlineCallbacks) {
            ExecMode::InlineCallbacks
        } else {
            ExecMode::IoThreads
        };
        let mut arch = arch.clone();
        arch.exec_mode = mode;
        let work = fio(cfg, FioPattern::RandRead, cfg.workload.op_count, cfg.workload.queue_depth, cost, arch.seed);
        let o = execute(cfg, &arch, work)?;
        let oracle = (cfg.backend.kind == BackendKind::Sim).then(|| callback_oracle(cfg, mode, cost));
        Ok((o, oracle))
    })
}

/// Dynamic against static pool on the same square-wave load.
#[derive(Clone, Debug)]
pub struct ScalingTrace {
    pub profile: LoadProfile,
    pub dynamic: MetricsReport,
    pub fixed: MetricsReport,
    pub trace: Option<Vec<TraceEvent>>,
}

impl ScalingTrace {
    /// `(phase index, duration)` of the phases at the highest load.
    pub fn peak_phases(&self) -> Vec<(usize, u64)> {
        let top = self.profile.phases.iter().map(|p| p.fraction).fold(f64::MIN, f64::max);
        self.profile
            .phases
            .iter()
            .enumerate()
            .filter(|(_, p)| p.fraction == top)
            .map(|(i, p)| (i, p.duration_ns))
            .collect()
    }

    pub fn peak_iops(&self, report: &MetricsReport) -> f64 {
        report.phase_iops(&self.peak_phases())
    }
}

pub fn load_profile(cfg: &ExperimentConfig) -> LoadProfile {
    let s = &cfg.scaling;
    let reference = if s.reference_iops > 0.0 {
        s.reference_iops
    } else {
        cfg.backend.device.steady_state_iops(cfg.backend.device.internal_parallelism)
    };
    LoadProfile::square_wave(s.high, s.low, s.phase_ns, s.periods, reference)
}

/// The profile bounds the run; `workload.op_count` is not used.
pub fn scaling_trace(cfg: &ExperimentConfig, trace: bool) -> Result<ScalingTrace, BenchError> {
    cfg.validate()?;
    if cfg.architecture.architecture != Architecture::DynamicPool {
        return Err(BenchError::ConfigInvalid {
            path: "architecture.architecture".into(),
            msg: "scaling-trace needs dynamic_pool".into(),
        });
    }
    let profile = load_profile(cfg);
    let go = |arch: Architecture, trace: bool| {
        let mut a = arch_for(cfg, 0, trace);
        a.architecture = arch;
        let work = fio(cfg, cfg.workload.op_kind, u64::MAX, cfg.workload.queue_depth, cfg.workload.callback_cost_ns, a.seed)
            .with_profile(profile.clone());
        execute(cfg, &a, work)
    };
    let dynamic = go(Architecture::DynamicPool, trace)?;
    let fixed = go(Architecture::StaticPool, false)?;
    Ok(ScalingTrace {
        profile,
        trace: trace.then_some(dynamic.trace),
        dynamic: dynamic.report,
        fixed: fixed.report,
    })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|v| format!("{v:.3}")).unwrap_or_default()
}

pub fn qd_csv(out: &SweepOutput) -> String {
    let mut s = format!("qd,run,predicted_iops,{}\n", MetricsReport::CSV_HEADER);
    for p in &out.samples {
        writeln!(s, "{},{},{},{}", p.x, p.run, fmt_opt(p.expected_iops), p.report.csv_row()).unwrap();
    }
    s
}

pub fn callback_csv(out: &SweepOutput) -> String {
    let mut s = format!("exec_mode,callback_cost_ns,run,oracle_iops,{}\n", MetricsReport::CSV_HEADER);
    for p in &out.samples {
        writeln!(s, "{},{},{},{},{}", p.series, p.x, p.run, fmt_opt(p.expected_iops), p.report.csv_row()).unwrap();
    }
    s
}

pub fn scaling_csv(t: &ScalingTrace) -> String {
    let mut s = format!("architecture,peak_phase_iops,{}\n", MetricsReport::CSV_HEADER);
    for (name, r) in [("dynamic_pool", &t.dynamic), ("static_pool", &t.fixed)] {
        writeln!(s, "{name},{:.3},{}", t.peak_iops(r), r.csv_row()).unwrap();
    }
    s
}

pub fn timeline_csv(t: &ScalingTrace) -> String {
    let mut s = String::from("architecture,time_ns,active_count\n");
    for (name, r) in [("dynamic_pool", &t.dynamic), ("static_pool", &t.fixed)] {
        for &(time, n) in &r.active_instance_timeline {
            writeln!(s, "{name},{time},{n}").unwrap();
        }
    }
    s
}

/// Mean IOPS per `(series, x)`, in sweep order.
pub fn mean_iops(out: &SweepOutput) -> Vec<(String, u64, f64)> {
    let mut acc: Vec<(String, u64, f64, usize)> = Vec::new();
    for p in &out.samples {
        match acc.iter_mut().find(|(s, x, _, _)| *s == p.series && *x == p.x) {
            Some(e) => {
                e.2 += p.report.iops();
                e.3 += 1;
            }
            None => acc.push((p.series.clone(), p.x, p.report.iops(), 1)),
        }
    }
    acc.into_iter().map(|(s, x, sum, n)| (s, x, sum / n as f64)).collect()
}
