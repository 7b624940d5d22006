use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::spec::{fold_child, fold_completion, IoTemplate, Step, TaskSpec, Transform};
use crate::ring::{Completion, Geometry, IoRequest};

/// Flat instruction; nested sub-tasks become `Enter` / `Exit` brackets.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Instr {
    Compute { cost_ns: u64, transform: Transform },
    Io(IoTemplate),
    Enter { initial_state: Vec<u8> },
    Exit,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Program {
    pub instrs: Vec<Instr>,
}

impl Program {
    pub fn lower(spec: &TaskSpec) -> Program {
        fn go(spec: &TaskSpec, out: &mut Vec<Instr>) {
            for step in &spec.steps {
                match step {
                    Step::Compute { cost_ns, transform } => out.push(Instr::Compute {
                        cost_ns: *cost_ns,
                        transform: *transform,
                    }),
                    Step::Io(t) => out.push(Instr::Io(*t)),
                    Step::Nested(child) => {
                        out.push(Instr::Enter {
                            initial_state: child.initial_state.clone(),
                        });
                        go(child, out);
                        out.push(Instr::Exit);
                    }
                }
            }
        }
        let mut instrs = Vec::new();
        go(spec, &mut instrs);
        Program { instrs }
    }

    /// Index ranges of the compute runs around each I/O. Returns
    /// `(segments, io_positions)` with `segments.len() == io_positions.len() + 1`.
    fn segments(&self) -> (Vec<Range<u32>>, Vec<u32>) {
        let mut segs = Vec::new();
        let mut ios = Vec::new();
        let mut start = 0u32;
        for (i, ins) in self.instrs.iter().enumerate() {
            if matches!(ins, Instr::Io(_)) {
                segs.push(start..i as u32);
                ios.push(i as u32);
                start = i as u32 + 1;
            }
        }
        segs.push(start..self.instrs.len() as u32);
        (segs, ios)
    }
}

/// Stack of state blobs; the top belongs to the innermost running sub-task.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TaskState {
    stack: Vec<Vec<u8>>,
}

impl TaskState {
    pub fn new(initial: Vec<u8>) -> Self {
        TaskState { stack: vec![initial] }
    }

    pub fn top(&self) -> &[u8] {
        self.stack.last().expect("task state stack is never empty")
    }

    fn top_mut(&mut self) -> &mut Vec<u8> {
        self.stack.last_mut().expect("task state stack is never empty")
    }

    pub fn depth(&self) -> usize {
        self.stack.len()
    }

    /// Executes compute-side instructions; returns their total cost.
    pub fn run(&mut self, prog: &Program, range: Range<u32>) -> u64 {
        let mut cost = 0;
        for ins in &prog.instrs[range.start as usize..range.end as usize] {
            match ins {
                Instr::Compute { cost_ns, transform } => {
                    cost += cost_ns;
                    transform.apply(self.top_mut());
                }
                Instr::Enter { initial_state } => self.stack.push(initial_state.clone()),
                Instr::Exit => {
                    let child = self.stack.pop().expect("unbalanced exit");
                    fold_child(self.top_mut(), &child);
                }
                Instr::Io(_) => unreachable!("I/O inside a compute range"),
            }
        }
        cost
    }

    pub fn request(&self, prog: &Program, io: u32, task_id: u64, geometry: &Geometry) -> IoRequest {
        match &prog.instrs[io as usize] {
            Instr::Io(t) => t.resolve(task_id, self.top(), geometry),
            other => panic!("instruction {io} is not I/O: {other:?}"),
        }
    }

    pub fn complete(&mut self, c: &Completion) {
        fold_completion(self.top_mut(), c);
    }

    pub fn into_final(mut self) -> Vec<u8> {
        debug_assert_eq!(self.stack.len(), 1);
        self.stack.pop().unwrap_or_default()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum TaskletKind {
    Compute,
    /// Polls for the completion of instruction `io`.
    Poll { io: u32 },
    /// Polls for `io`, then runs the successor compute run in place.
    PollThen { io: u32 },
}

/// What the scheduler enqueues after a tasklet finishes. A poll tasklet
/// that misses always respawns itself.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SpawnRule {
    Successor(u32),
    Done,
}

/// Unit of work that runs start to finish on one thread.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tasklet {
    pub tasklet_id: u32,
    pub owner_task: u64,
    pub kind: TaskletKind,
    /// Compute instructions executed by this tasklet.
    pub body: Range<u32>,
    /// I/O instruction submitted at the end of the body.
    pub submit: Option<u32>,
    pub spawn: SpawnRule,
}

impl Tasklet {
    pub fn is_poll(&self) -> bool {
        !matches!(self.kind, TaskletKind::Compute)
    }
}

/// One tasklet per compute run (carrying the following submission) and a
/// separate poll tasklet per I/O.
pub fn partition_full(spec: &TaskSpec) -> Vec<Tasklet> {
    full_from_program(spec.task_id, &Program::lower(spec))
}

pub(crate) fn full_from_program(owner: u64, prog: &Program) -> Vec<Tasklet> {
    let (segs, ios) = prog.segments();
    let mut out: Vec<Tasklet> = Vec::with_capacity(segs.len() + ios.len());
    for (i, seg) in segs.iter().enumerate() {
        let trailing_empty = i == ios.len() && i > 0 && seg.is_empty();
        if !trailing_empty {
            let id = out.len() as u32;
            out.push(Tasklet {
                tasklet_id: id,
                owner_task: owner,
                kind: TaskletKind::Compute,
                body: seg.clone(),
                submit: ios.get(i).copied(),
                spawn: if i < ios.len() {
                    SpawnRule::Successor(id + 1)
                } else {
                    SpawnRule::Done
                },
            });
        }
        if let Some(&io) = ios.get(i) {
            let id = out.len() as u32;
            let has_successor = !(i + 1 == ios.len() && segs[i + 1].is_empty());
            out.push(Tasklet {
                tasklet_id: id,
                owner_task: owner,
                kind: TaskletKind::Poll { io },
                body: io + 1..io + 1,
                submit: None,
                spawn: if has_successor {
                    SpawnRule::Successor(id + 1)
                } else {
                    SpawnRule::Done
                },
            });
        }
    }
    out
}

/// Like [`partition_full`], but every poll tasklet that has a successor is
/// fused with it, so post-I/O work runs on the polling thread.
pub fn partition_callback(spec: &TaskSpec) -> Vec<Tasklet> {
    callback_from_program(spec.task_id, &Program::lower(spec))
}

pub(crate) fn callback_from_program(owner: u64, prog: &Program) -> Vec<Tasklet> {
    let (segs, ios) = prog.segments();
    let mut out = Vec::with_capacity(ios.len() + 1);
    out.push(Tasklet {
        tasklet_id: 0,
        owner_task: owner,
        kind: TaskletKind::Compute,
        body: segs[0].clone(),
        submit: ios.first().copied(),
        spawn: if ios.is_empty() {
            SpawnRule::Done
        } else {
            SpawnRule::Successor(1)
        },
    });
    for (i, &io) in ios.iter().enumerate() {
        let id = out.len() as u32;
        let next = &segs[i + 1];
        let last = i + 1 == ios.len();
        let fused = !(last && next.is_empty());
        out.push(Tasklet {
            tasklet_id: id,
            owner_task: owner,
            kind: if fused {
                TaskletKind::PollThen { io }
            } else {
                TaskletKind::Poll { io }
            },
            body: next.clone(),
            submit: ios.get(i + 1).copied(),
            spawn: if last {
                SpawnRule::Done
            } else {
                SpawnRule::Successor(id + 1)
            },
        });
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::partition::spec::OffsetRule;

    fn compute(cost: u64) -> Step {
        Step::Compute {
            cost_ns: cost,
            transform: Transform::AddAll { value: 1 },
        }
    }

    fn io() -> Step {
        Step::Io(IoTemplate::read(1, OffsetRule::Fixed { block: 0 }))
    }

    fn spec(steps: Vec<Step>) -> TaskSpec {
        TaskSpec::new(1, steps, vec![0])
    }

    #[test]
    fn full_splits_around_io() {
        let t = partition_full(&spec(vec![compute(1), io(), compute(2)]));
        let kinds: Vec<_> = t.iter().map(|t| t.kind).collect();
        assert_eq!(
            kinds,
            [TaskletKind::Compute, TaskletKind::Poll { io: 1 }, TaskletKind::Compute]
        );
        assert_eq!(t[0].submit, Some(1));
        assert_eq!(t[0].spawn, SpawnRule::Successor(1));
        assert_eq!(t[1].spawn, SpawnRule::Successor(2));
        assert_eq!(t[2].spawn, SpawnRule::Done);
    }

    #[test]
    fn pure_compute_is_one_tasklet() {
        let s = spec(vec![compute(1)]);
        for t in [partition_full(&s), partition_callback(&s)] {
            assert_eq!(t.len(), 1);
            assert_eq!(t[0].kind, TaskletKind::Compute);
            assert_eq!(t[0].spawn, SpawnRule::Done);
        }
    }

    #[test]
    fn three_ios_give_three_polls_and_four_computes() {
        let s = spec(vec![
            compute(1),
            io(),
            compute(1),
            io(),
            compute(1),
            io(),
            compute(1),
        ]);
        let t = partition_full(&s);
        assert_eq!(t.iter().filter(|t| t.is_poll()).count(), 3);
        assert_eq!(t.iter().filter(|t| !t.is_poll()).count(), 4);
    }

    #[test]
    fn callback_fuses_poll_with_successor() {
        let t = partition_callback(&spec(vec![compute(1), io(), compute(2)]));
        assert_eq!(t.len(), 2);
        assert_eq!(t[1].kind, TaskletKind::PollThen { io: 1 });
        assert_eq!(t[1].body, 2..3);
    }

    #[test]
    fn callback_count_is_full_minus_fused_polls() {
        let s = spec(vec![io(), io(), compute(1), io()]);
        let full = partition_full(&s);
        let cb = partition_callback(&s);
        // The trailing I/O has no successor and stays a plain poll.
        assert_eq!(cb.len(), full.len() - 2);
        assert_eq!(cb.last().unwrap().kind, TaskletKind::Poll { io: 3 });
    }
}
