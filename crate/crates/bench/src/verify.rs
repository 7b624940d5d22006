use std::fmt::Write as _;
use std::thread;

use aioarch::exec::{run, Architecture, Workload};
use aioarch::metrics::MetricsReport;
use aioarch::partition::{generate_corpus, run_sequential, Scheme};
use aioarch::ring::spsc;
use aioarch::ring::{ApiInstance, IoRequest, IoResult, PushOutcome};
use aioarch::sim::{SimDevice, TraceKind};
use aioarch::ClockSource;

use crate::config::ExperimentConfig;
use crate::experiments::run_seed;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

#[derive(Clone, Debug, Default)]
pub struct VerifyReport {
    pub checks: Vec<Check>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        !self.checks.is_empty() && self.checks.iter().all(|c| c.passed)
    }

    /// `check,status,detail` lines followed by an `overall` line.
    pub fn render(&self) -> String {
        let mut s = String::from("check,status,detail\n");
        for c in &self.checks {
            let status = if c.passed { "pass" } else { "fail" };
            writeln!(s, "{},{},{}", c.name, status, c.detail.replace(',', ";")).unwrap();
        }
        let overall = if self.passed() { "pass" } else { "fail" };
        writeln!(s, "overall,{overall},").unwrap();
        s
    }

    fn push(&mut self, name: &'static str, r: Result<String, String>) {
        let (passed, detail) = match r {
            Ok(d) => (true, d),
            Err(d) => (false, d),
        };
        self.checks.push(Check { name, passed, detail });
    }
}

fn spsc_fifo(items: u64) -> Result<String, String> {
    let (mut tx, mut rx) = spsc::ring::<u64>(256);
    let producer = thread::spawn(move || {
        let mut i = 0;
        while i < items {
            if tx.push(i).is_ok() {
                i += 1;
            } else {
                thread::yield_now();
            }
        }
    });
    let mut want = 0;
    while want < items {
        match rx.pop() {
            Some(v) if v == want => want += 1,
            Some(v) => return Err(format!("expected {want}, got {v}")),
            None => thread::yield_now(),
        }
    }
    producer.join().map_err(|_| "producer panicked".to_string())?;
    if rx.pop().is_some() {
        return Err("extra item".into());
    }
    Ok(format!("{items} items in order"))
}

fn exactly_once(cfg: &ExperimentConfig, owner_changes: &mut Vec<(Architecture, u64)>) -> Result<String, String> {
    let v = &cfg.verify;
    let mut runs = 0;
    for arch in Architecture::ALL {
        for scheme in Scheme::ALL {
            for s in 0..v.seeds {
                let mut a = cfg.architecture.clone();
                a.architecture = arch;
                a.scheme = scheme;
                a.seed = run_seed(cfg.seed, s as usize);
                let work = Workload::fio(
                    cfg.workload.op_kind,
                    v.ops,
                    cfg.blocks(),
                    cfg.workload.queue_depth,
                    cfg.workload.callback_cost_ns,
                    a.seed,
                );
                let out = run(work, &a, &cfg.backend.device).map_err(|e| format!("{arch:?}/{scheme:?}: {e}"))?;
                let r = &out.report;
                if !r.is_conserved() || r.delivered() != v.ops {
                    return Err(format!(
                        "{arch:?}/{scheme:?}: submitted {} delivered {} of {}",
                        r.submitted,
                        r.delivered(),
                        v.ops
                    ));
                }
                if r.duplicate_completions != 0 || out.handles_created != out.handles_completed {
                    return Err(format!("{arch:?}/{scheme:?}: handle delivered twice or never"));
                }
                owner_changes.push((arch, r.spsc_owner_changes));
                runs += 1;
            }
        }
    }
    Ok(format!("{runs} runs of {} requests", v.ops))
}

fn scheme_equivalence(cfg: &ExperimentConfig) -> Result<String, String> {
    // Injected faults change task states, so the oracle comparison runs on
    // a fault-free copy of the device.
    let mut model = cfg.backend.device.clone();
    model.fault_plan.clear();
    let g = model.geometry();
    let specs = generate_corpus(cfg.seed, cfg.verify.corpus_tasks, &cfg.workload.corpus);
    let want: Vec<_> = specs.iter().map(|s| (s.task_id, run_sequential(s, &g))).collect();
    for arch in Architecture::ALL {
        for scheme in Scheme::ALL {
            let mut a = cfg.architecture.clone();
            a.architecture = arch;
            a.scheme = scheme;
            a.seed = cfg.seed;
            let work = Workload::corpus(specs.clone(), cfg.workload.queue_depth).collecting_states();
            let out = run(work, &a, &model).map_err(|e| format!("{arch:?}/{scheme:?}: {e}"))?;
            let got: Vec<_> = out.final_states.into_iter().collect();
            if got != want {
                return Err(format!("{arch:?}/{scheme:?}: final states differ from the sequential run"));
            }
        }
    }
    Ok(format!("{} tasks x 4 architectures x 3 schemes", specs.len()))
}

fn spsc_ownership(owner_changes: &[(Architecture, u64)]) -> Result<String, String> {
    for &(arch, n) in owner_changes {
        if arch != Architecture::DirectAccess && n != 0 {
            return Err(format!("{arch:?}: ring side touched by {n} foreign threads"));
        }
    }
    let shared: u64 = owner_changes
        .iter()
        .filter(|(a, _)| *a == Architecture::DirectAccess)
        .map(|(_, n)| n)
        .sum();
    Ok(format!("private rings single-owner; direct access handed off {shared} times under its lock"))
}

/// Recounts errors from the device trace and compares with the report
/// built from reaped completions.
fn fault_reconciliation(cfg: &ExperimentConfig) -> Result<String, String> {
    let model = cfg.backend.device.clone();
    let clock = ClockSource::virtual_clock();
    let mut dev = SimDevice::new(model.clone(), cfg.seed).map_err(|e| e.to_string())?.with_trace();
    let (mut inst, ep) = ApiInstance::new(&cfg.architecture.ring, model.geometry(), clock.clone()).map_err(|e| e.to_string())?;
    dev.attach(ep);
    let n = cfg.verify.ops.min(100_000);
    let mut trace = Vec::new();
    let mut sent = 0;
    while trace.len() < n as usize {
        while sent < n {
            let req = IoRequest::read((sent % 1024) * model.block_size as u64, model.block_size);
            match inst.sq_push(req).map_err(|e| e.to_string())? {
                PushOutcome::Accepted(_) => sent += 1,
                PushOutcome::QueueFull => break,
            }
        }
        inst.enter();
        dev.kick(0, clock.now_ns());
        if dev.step() > 0 {
            clock.set(dev.now());
        } else if dev.is_idle() && trace.len() < sent as usize {
            dev.run_until_idle();
        }
        trace.extend(inst.cq_reap(usize::MAX));
    }
    let report = MetricsReport::from_trace(0, &trace);
    let events = dev.take_trace();
    let count = |f: fn(&IoResult) -> bool| {
        events
            .iter()
            .filter(|e| e.kind == TraceKind::Complete && e.result.as_ref().is_some_and(f))
            .count() as u64
    };
    let errored = count(|r| matches!(r, IoResult::Error(_)));
    let canceled = count(|r| matches!(r, IoResult::Canceled));
    if !report.is_conserved() || report.errored != errored || report.canceled != canceled {
        return Err(format!(
            "report errored/canceled {}/{} vs trace {errored}/{canceled}",
            report.errored, report.canceled
        ));
    }
    Ok(format!("{n} requests; {errored} errored; {canceled} canceled"))
}

/// Runs the invariant suite. Never fails itself; problems are reported as
/// failed checks.
pub fn verify(cfg: &ExperimentConfig) -> VerifyReport {
    let mut out = VerifyReport::default();
    out.push("config", cfg.validate_basic().map(|_| "ok".into()).map_err(|e| e.to_string()));
    let ring = cfg.architecture.ring.validate();
    out.push(
        "ring_invariants",
        ring.as_ref().map(|_| "cq >= sq, powers of two".into()).map_err(|e| e.to_string()),
    );
    let device = cfg.backend.device.validate();
    out.push("device_model", device.as_ref().map(|_| "ok".into()).map_err(|e| e.to_string()));
    out.push("spsc_fifo", spsc_fifo(cfg.verify.spsc_items));
    if !out.passed() {
        return out;
    }
    let mut owners = Vec::new();
    out.push("exactly_once", exactly_once(cfg, &mut owners));
    out.push("spsc_instrumentation", spsc_ownership(&owners));
    out.push("scheme_equivalence", scheme_equivalence(cfg));
    out.push("fault_reconciliation", fault_reconciliation(cfg));
    out
}
