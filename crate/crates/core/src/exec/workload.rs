use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::ExecError;
use crate::partition::{CompiledTask, IoTemplate, OffsetRule, TaskSpec};
use crate::ring::IoKind;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FioPattern {
    #[default]
    SeqRead,
    RandRead,
    SeqWrite,
    RandWrite,
}

impl FioPattern {
    fn template(self, blocks: u32, span: u64, seed: u64) -> IoTemplate {
        let (kind, offset) = match self {
            FioPattern::SeqRead => (IoKind::Read, OffsetRule::TaskSequential),
            FioPattern::RandRead => (IoKind::Read, OffsetRule::TaskRandom { span, seed }),
            FioPattern::SeqWrite => (IoKind::Write, OffsetRule::TaskSequential),
            FioPattern::RandWrite => (IoKind::Write, OffsetRule::TaskRandom { span, seed }),
        };
        IoTemplate { kind, blocks, offset }
    }
}

pub enum TaskSource {
    /// Distinct tasks, identified by their spec's task id.
    Corpus(Vec<Arc<CompiledTask>>),
    /// `count` copies of one task; copy `i` runs with task id `i`.
    Repeat { task: Arc<CompiledTask>, count: u64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoadPhase {
    pub duration_ns: u64,
    /// Offered load as a fraction of the reference rate; 1 or more means
    /// every worker keeps its full window busy.
    pub fraction: f64,
}

/// Time-varying offered load.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoadProfile {
    pub phases: Vec<LoadPhase>,
    /// Task arrivals per second at fraction 1.
    pub reference_iops: f64,
}

impl LoadProfile {
    /// `periods` repetitions of a `high` phase followed by a `low` phase.
    pub fn square_wave(high: f64, low: f64, phase_ns: u64, periods: usize, reference_iops: f64) -> Self {
        let mut phases = Vec::with_capacity(periods * 2);
        for _ in 0..periods {
            phases.push(LoadPhase {
                duration_ns: phase_ns,
                fraction: high,
            });
            phases.push(LoadPhase {
                duration_ns: phase_ns,
                fraction: low,
            });
        }
        LoadProfile { phases, reference_iops }
    }

    pub fn constant(fraction: f64, duration_ns: u64, reference_iops: f64) -> Self {
        LoadProfile {
            phases: vec![LoadPhase { duration_ns, fraction }],
            reference_iops,
        }
    }

    pub fn total_ns(&self) -> u64 {
        self.phases.iter().map(|p| p.duration_ns).sum()
    }

    /// `(start, end, fraction)` of every phase, relative to the run start.
    pub fn spans(&self) -> Vec<(u64, u64, f64)> {
        let mut t = 0;
        self.phases
            .iter()
            .map(|p| {
                let s = t;
                t += p.duration_ns;
                (s, t, p.fraction)
            })
            .collect()
    }

    pub fn validate(&self) -> Result<(), ExecError> {
        if self.phases.is_empty() {
            return Err(ExecError::Config("load profile has no phases".into()));
        }
        if !(self.reference_iops > 0.0 && self.reference_iops.is_finite()) {
            return Err(ExecError::Config("reference_iops must be positive".into()));
        }
        if self.phases.iter().any(|p| !(p.fraction >= 0.0 && p.fraction.is_finite())) {
            return Err(ExecError::Config("phase fractions must be finite and >= 0".into()));
        }
        Ok(())
    }
}

pub struct Workload {
    pub source: TaskSource,
    /// Tasks each worker keeps in flight.
    pub qd: usize,
    /// `(before, after)` task indices: `after` starts only once `before`
    /// has finished.
    pub deps: Vec<(usize, usize)>,
    pub profile: Option<LoadProfile>,
    /// Keep every task's final state in the outcome.
    pub collect_states: bool,
}

impl Workload {
    pub fn new(source: TaskSource, qd: usize) -> Self {
        Workload {
            source,
            qd,
            deps: Vec::new(),
            profile: None,
            collect_states: false,
        }
    }

    /// Each task issues one I/O of `blocks` blocks and then runs a
    /// `callback_cost_ns` post-I/O step.
    pub fn fio(pattern: FioPattern, op_count: u64, blocks: u32, qd: usize, callback_cost_ns: u64, seed: u64) -> Self {
        let spec = TaskSpec::read_then_callback(0, pattern.template(blocks, 1 << 24, seed), callback_cost_ns);
        Workload::new(
            TaskSource::Repeat {
                task: CompiledTask::new(Arc::new(spec)),
                count: op_count,
            },
            qd,
        )
    }

    pub fn corpus(specs: Vec<TaskSpec>, qd: usize) -> Self {
        let tasks = specs
            .into_iter()
            .map(|s| CompiledTask::new(Arc::new(s)))
            .collect();
        Workload::new(TaskSource::Corpus(tasks), qd)
    }

    pub fn with_deps(mut self, deps: Vec<(usize, usize)>) -> Self {
        self.deps = deps;
        self
    }

    pub fn with_profile(mut self, profile: LoadProfile) -> Self {
        self.profile = Some(profile);
        self
    }

    pub fn collecting_states(mut self) -> Self {
        self.collect_states = true;
        self
    }

    pub fn task_count(&self) -> u64 {
        match &self.source {
            TaskSource::Corpus(v) => v.len() as u64,
            TaskSource::Repeat { count, .. } => *count,
        }
    }

    pub(crate) fn task(&self, index: u64) -> (Arc<CompiledTask>, u64) {
        match &self.source {
            TaskSource::Corpus(v) => {
                let t = &v[index as usize];
                (t.clone(), t.spec.task_id)
            }
            TaskSource::Repeat { task, .. } => (task.clone(), index),
        }
    }

    pub fn validate(&self) -> Result<(), ExecError> {
        if self.qd == 0 {
            return Err(ExecError::Config("qd must be >= 1".into()));
        }
        let n = self.task_count() as usize;
        for &(b, a) in &self.deps {
            if !matches!(self.source, TaskSource::Corpus(_)) {
                return Err(ExecError::Config("dependencies need a corpus workload".into()));
            }
            if b >= n || a >= n || b >= a {
                return Err(ExecError::Config(format!(
                    "dependency {b} -> {a} must point forward within {n} tasks"
                )));
            }
        }
        if let Some(p) = &self.profile {
            p.validate()?;
        }
        Ok(())
    }
}

/// Arrival times of one worker's tasks under a load profile.
#[derive(Clone, Debug)]
pub(crate) struct Arrivals {
    /// `(start, end, per-worker interval)`; no interval means saturating.
    phases: Vec<(u64, u64, Option<u64>)>,
    stagger: Vec<u64>,
    idx: usize,
    next: Option<u64>,
}

impl Arrivals {
    pub(crate) fn new(profile: &LoadProfile, start: u64, worker: usize, workers: usize) -> Self {
        let mut phases = Vec::new();
        let mut stagger = Vec::new();
        for (s, e, f) in profile.spans() {
            let interval = if f >= 1.0 {
                None
            } else if f <= 0.0 {
                Some(u64::MAX)
            } else {
                let per_worker = workers as f64 * 1e9 / (f * profile.reference_iops);
                Some(per_worker.max(1.0) as u64)
            };
            let off = match interval {
                Some(i) if i != u64::MAX => i / workers as u64 * worker as u64,
                _ => 0,
            };
            phases.push((start + s, start + e, interval));
            stagger.push(off);
        }
        Arrivals {
            phases,
            stagger,
            idx: 0,
            next: None,
        }
    }

    /// Arrival time of the next task given a free window slot at `now`;
    /// `None` once the profile has ended.
    pub(crate) fn peek(&mut self, now: u64) -> Option<u64> {
        loop {
            let &(s, e, interval) = self.phases.get(self.idx)?;
            match interval {
                None => {
                    if now >= e {
                        self.idx += 1;
                        continue;
                    }
                    return Some(now.max(s));
                }
                Some(u64::MAX) => {
                    self.idx += 1;
                }
                Some(_) => {
                    let t = *self.next.get_or_insert(s + self.stagger[self.idx]);
                    if t >= e {
                        self.idx += 1;
                        self.next = None;
                        continue;
                    }
                    return Some(t);
                }
            }
        }
    }

    /// Consumes the arrival returned by the last [`Self::peek`].
    pub(crate) fn take(&mut self) {
        if let Some((_, _, Some(i))) = self.phases.get(self.idx) {
            if let Some(t) = self.next.as_mut() {
                *t = t.saturating_add(*i);
            }
        }
    }
}
