use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::coroutine::{make_coroutine_shared, CoroutineError, CoroutineFrame, Resume};
use super::spec::TaskSpec;
use super::tasklet::{callback_from_program, full_from_program, Program, SpawnRule, TaskState, Tasklet, TaskletKind};
use crate::ring::{Completion, Geometry, IoRequest};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    #[default]
    Full,
    Callback,
    Coroutine,
}

impl Scheme {
    pub const ALL: [Scheme; 3] = [Scheme::Full, Scheme::Callback, Scheme::Coroutine];

    pub fn name(self) -> &'static str {
        match self {
            Scheme::Full => "full",
            Scheme::Callback => "callback",
            Scheme::Coroutine => "coroutine",
        }
    }
}

/// A spec lowered once for every scheme; shared by all tasks built from it.
#[derive(Debug)]
pub struct CompiledTask {
    pub spec: Arc<TaskSpec>,
    pub program: Program,
    pub full: Vec<Tasklet>,
    pub callback: Vec<Tasklet>,
}

impl CompiledTask {
    pub fn new(spec: Arc<TaskSpec>) -> Arc<Self> {
        let program = Program::lower(&spec);
        let full = full_from_program(spec.task_id, &program);
        let callback = callback_from_program(spec.task_id, &program);
        Arc::new(CompiledTask {
            spec,
            program,
            full,
            callback,
        })
    }
}

/// Result of running a task up to its next suspension point.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Progress {
    pub compute_ns: u64,
    pub submit: Option<IoRequest>,
    /// Final state once the task has finished.
    pub done: Option<Vec<u8>>,
    /// Frames walked by a coroutine resume (0 for tasklet schemes).
    pub resume_depth: u32,
    pub frame_bytes: usize,
}

#[derive(Debug)]
enum Body {
    Tasklets { state: TaskState, cur: Option<u32> },
    Frame { frame: Box<CoroutineFrame>, pending: Option<Completion> },
}

/// Live execution of one task under a scheme. Moves between threads but
/// is only ever driven by one at a time.
#[derive(Debug)]
pub struct TaskRun {
    task_id: u64,
    scheme: Scheme,
    task: Arc<CompiledTask>,
    body: Body,
}

impl TaskRun {
    pub fn new(task: Arc<CompiledTask>, task_id: u64, scheme: Scheme) -> Self {
        let body = match scheme {
            Scheme::Coroutine => Body::Frame {
                frame: Box::new(make_coroutine_shared(task.spec.clone(), task_id)),
                pending: None,
            },
            _ => Body::Tasklets {
                state: TaskState::new(task.spec.initial_state.clone()),
                cur: Some(0),
            },
        };
        TaskRun {
            task_id,
            scheme,
            task,
            body,
        }
    }

    pub fn task_id(&self) -> u64 {
        self.task_id
    }

    pub fn scheme(&self) -> Scheme {
        self.scheme
    }

    fn tasklets(&self) -> &[Tasklet] {
        match self.scheme {
            Scheme::Callback => &self.task.callback,
            _ => &self.task.full,
        }
    }

    /// Tasklet the scheduler would run next.
    pub fn current_tasklet(&self) -> Option<&Tasklet> {
        match &self.body {
            Body::Tasklets { cur: Some(i), .. } => Some(&self.tasklets()[*i as usize]),
            _ => None,
        }
    }

    /// Runs the current compute tasklet (or resumes the coroutine) up to
    /// the next submission or the end of the task.
    pub fn advance(&mut self, geometry: &Geometry) -> Result<Progress, CoroutineError> {
        let task_id = self.task_id;
        let scheme = self.scheme;
        let task = self.task.clone();
        match &mut self.body {
            Body::Tasklets { state, cur } => {
                let idx = cur.expect("advance on a finished task");
                let list = match scheme {
                    Scheme::Callback => &task.callback,
                    _ => &task.full,
                };
                let t = &list[idx as usize];
                debug_assert!(
                    !matches!(t.kind, TaskletKind::Poll { .. }),
                    "advance on a pending poll tasklet"
                );
                let compute_ns = state.run(&task.program, t.body.clone());
                let submit = t
                    .submit
                    .map(|io| state.request(&task.program, io, task_id, geometry).with_user_data(task_id));
                *cur = match t.spawn {
                    SpawnRule::Successor(n) => Some(n),
                    SpawnRule::Done => None,
                };
                let done = if cur.is_none() {
                    Some(std::mem::replace(state, TaskState::new(Vec::new())).into_final())
                } else {
                    None
                };
                Ok(Progress {
                    compute_ns,
                    submit,
                    done,
                    ..Progress::default()
                })
            }
            Body::Frame { frame, pending } => {
                let depth = frame.depth();
                let c = pending.take();
                let r = frame.resume(c.as_ref(), geometry)?;
                let frame_bytes = frame.frame_bytes();
                let compute_ns = frame.take_compute_ns();
                let (submit, done) = match r {
                    Resume::SuspendedOnIo(req) => (Some(req), None),
                    Resume::Done(s) => (None, Some(s)),
                };
                Ok(Progress {
                    compute_ns,
                    submit,
                    done,
                    resume_depth: depth,
                    frame_bytes,
                })
            }
        }
    }

    /// Delivers the completion the task is waiting for. Returns the final
    /// state if the task has nothing left to run.
    ///
    /// Under full partitioning the successor must then be scheduled as its
    /// own tasklet; under the other schemes the caller continues with
    /// [`Self::advance`] on the same thread.
    pub fn deliver(&mut self, c: &Completion) -> Option<Vec<u8>> {
        let scheme = self.scheme;
        let task = self.task.clone();
        match &mut self.body {
            Body::Tasklets { state, cur } => {
                let idx = cur.expect("deliver on a finished task");
                let list = match scheme {
                    Scheme::Callback => &task.callback,
                    _ => &task.full,
                };
                let t = &list[idx as usize];
                state.complete(c);
                match t.kind {
                    TaskletKind::Poll { .. } => {
                        *cur = match t.spawn {
                            SpawnRule::Successor(n) => Some(n),
                            SpawnRule::Done => None,
                        };
                        if cur.is_none() {
                            return Some(std::mem::replace(state, TaskState::new(Vec::new())).into_final());
                        }
                        None
                    }
                    TaskletKind::PollThen { .. } => None,
                    TaskletKind::Compute => panic!("deliver while no I/O is outstanding"),
                }
            }
            Body::Frame { pending, .. } => {
                *pending = Some(*c);
                None
            }
        }
    }

    /// True if the next step after a delivered completion runs in place
    /// (fused callback or coroutine resume) rather than as a new tasklet.
    pub fn continues_in_place(&self) -> bool {
        match &self.body {
            Body::Frame { .. } => true,
            Body::Tasklets { cur: Some(i), .. } => {
                matches!(self.tasklets()[*i as usize].kind, TaskletKind::PollThen { .. })
            }
            Body::Tasklets { cur: None, .. } => false,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::partition::spec::{generate_corpus, run_sequential, CorpusConfig};
    use crate::ring::IoResult;

    fn drive(mut run: TaskRun, g: &Geometry) -> Vec<u8> {
        loop {
            let p = run.advance(g).unwrap();
            if let Some(s) = p.done {
                return s;
            }
            let req = p.submit.expect("not done, so it must be waiting on I/O");
            let c = Completion {
                request_id: 0,
                user_data: req.user_data,
                result: IoResult::Ok(req.length),
                submit_time: 0,
                complete_time: 0,
            };
            if let Some(s) = run.deliver(&c) {
                return s;
            }
        }
    }

    #[test]
    fn every_scheme_matches_the_sequential_oracle() {
        let g = Geometry::default();
        for spec in generate_corpus(11, 300, &CorpusConfig::default()) {
            let want = run_sequential(&spec, &g);
            let compiled = CompiledTask::new(Arc::new(spec.clone()));
            for scheme in Scheme::ALL {
                let got = drive(TaskRun::new(compiled.clone(), spec.task_id, scheme), &g);
                assert_eq!(got, want, "task {} under {scheme:?}", spec.task_id);
            }
        }
    }
}
