use std::mem;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::spec::{fold_child, fold_completion, Step, TaskSpec};
use crate::ring::{Completion, Geometry, IoRequest};

/// Resume point of a frame.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ResumePoint {
    Start,
    /// Suspended on the I/O issued by step `n`.
    AwaitIo(usize),
    /// Step `n` is a nested sub-task whose frame is live.
    InChild(usize),
    Done,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Resume {
    SuspendedOnIo(IoRequest),
    Done(Vec<u8>),
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CoroutineError {
    #[error("frame {0} resumed after it finished")]
    ResumeAfterDone(u64),
    #[error("frame {frame} expected completion tag {expected:#x}, got {got:#x}")]
    CompletionMismatch { frame: u64, expected: u64, got: u64 },
    #[error("frame {0} is waiting for I/O but was resumed without a completion")]
    MissingCompletion(u64),
}

/// Heap-allocated frame of a stackless coroutine: the task arguments, the
/// live locals and a resume-point marker, plus the frame of a running
/// nested sub-task.
#[derive(Clone, Debug)]
pub struct CoroutineFrame {
    frame_id: u64,
    task_id: u64,
    args: Arc<TaskSpec>,
    state: ResumePoint,
    locals: Vec<u8>,
    child: Option<Box<CoroutineFrame>>,
    /// `user_data` tag of the outstanding request.
    expect: Option<u64>,
    io_seq: u32,
    compute_ns: u64,
    resumes: u64,
}

impl CoroutineFrame {
    fn with_ids(args: Arc<TaskSpec>, frame_id: u64, task_id: u64) -> Self {
        CoroutineFrame {
            frame_id,
            task_id,
            locals: args.initial_state.clone(),
            args,
            state: ResumePoint::Start,
            child: None,
            expect: None,
            io_seq: 0,
            compute_ns: 0,
            resumes: 0,
        }
    }

    pub fn frame_id(&self) -> u64 {
        self.frame_id
    }

    pub fn state(&self) -> ResumePoint {
        self.state
    }

    pub fn is_done(&self) -> bool {
        self.state == ResumePoint::Done
    }

    /// Live frames on the resume path, counting this one.
    pub fn depth(&self) -> u32 {
        1 + self.child.as_ref().map_or(0, |c| c.depth())
    }

    /// Bytes held by this frame and its live children.
    pub fn frame_bytes(&self) -> usize {
        mem::size_of::<Self>()
            + self.locals.len()
            + self.child.as_ref().map_or(0, |c| c.frame_bytes())
    }

    pub fn resumes(&self) -> u64 {
        self.resumes
    }

    /// Compute cost accumulated since the last call.
    pub fn take_compute_ns(&mut self) -> u64 {
        let own = mem::take(&mut self.compute_ns);
        own + self.child.as_mut().map_or(0, |c| c.take_compute_ns())
    }

    fn tag(&self) -> u64 {
        (self.frame_id << 20) ^ self.io_seq as u64
    }

    /// Runs until the next I/O or the end of the task. `completion` must be
    /// the completion of the request returned by the previous call.
    pub fn resume(
        &mut self,
        completion: Option<&Completion>,
        geometry: &Geometry,
    ) -> Result<Resume, CoroutineError> {
        self.resumes += 1;
        let mut pc = match self.state {
            ResumePoint::Done => return Err(CoroutineError::ResumeAfterDone(self.frame_id)),
            ResumePoint::Start => 0,
            ResumePoint::AwaitIo(n) => {
                let c = completion.ok_or(CoroutineError::MissingCompletion(self.frame_id))?;
                let expected = self.expect.take().unwrap_or(u64::MAX);
                if c.user_data != expected {
                    self.expect = Some(expected);
                    return Err(CoroutineError::CompletionMismatch {
                        frame: self.frame_id,
                        expected,
                        got: c.user_data,
                    });
                }
                fold_completion(&mut self.locals, c);
                n + 1
            }
            ResumePoint::InChild(n) => {
                let child = self.child.as_mut().expect("InChild without a child frame");
                match child.resume(completion, geometry)? {
                    Resume::SuspendedOnIo(req) => return Ok(Resume::SuspendedOnIo(req)),
                    Resume::Done(inner) => {
                        self.compute_ns += child.take_compute_ns();
                        self.child = None;
                        fold_child(&mut self.locals, &inner);
                        n + 1
                    }
                }
            }
        };
        let args = self.args.clone();
        while pc < args.steps.len() {
            match &args.steps[pc] {
                Step::Compute { cost_ns, transform } => {
                    self.compute_ns += cost_ns;
                    transform.apply(&mut self.locals);
                }
                Step::Io(t) => {
                    self.io_seq += 1;
                    let tag = self.tag();
                    self.expect = Some(tag);
                    self.state = ResumePoint::AwaitIo(pc);
                    let req = t.resolve(self.task_id, &self.locals, geometry).with_user_data(tag);
                    return Ok(Resume::SuspendedOnIo(req));
                }
                Step::Nested(spec) => {
                    let child_id = self.frame_id.wrapping_mul(31).wrapping_add(pc as u64 + 1);
                    let mut child = Box::new(CoroutineFrame::with_ids(spec.clone(), child_id, self.task_id));
                    match child.resume(None, geometry)? {
                        Resume::SuspendedOnIo(req) => {
                            self.child = Some(child);
                            self.state = ResumePoint::InChild(pc);
                            return Ok(Resume::SuspendedOnIo(req));
                        }
                        Resume::Done(inner) => {
                            self.compute_ns += child.take_compute_ns();
                            fold_child(&mut self.locals, &inner);
                        }
                    }
                }
            }
            pc += 1;
        }
        self.state = ResumePoint::Done;
        Ok(Resume::Done(mem::take(&mut self.locals)))
    }
}

pub fn make_coroutine(spec: &TaskSpec) -> CoroutineFrame {
    make_coroutine_shared(Arc::new(spec.clone()), spec.task_id)
}

/// Frame over a shared spec; `task_id` overrides the spec's id so one spec
/// can serve many tasks.
pub fn make_coroutine_shared(spec: Arc<TaskSpec>, task_id: u64) -> CoroutineFrame {
    CoroutineFrame::with_ids(spec, task_id + 1, task_id)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::partition::spec::{run_sequential, IoTemplate, OffsetRule, Transform};
    use crate::ring::IoResult;

    fn ok_for(req: &IoRequest) -> Completion {
        Completion {
            request_id: 0,
            user_data: req.user_data,
            result: IoResult::Ok(req.length),
            submit_time: 0,
            complete_time: 0,
        }
    }

    fn drive(frame: &mut CoroutineFrame, g: &Geometry) -> Vec<u8> {
        let mut c = None;
        loop {
            match frame.resume(c.as_ref(), g).unwrap() {
                Resume::SuspendedOnIo(req) => c = Some(ok_for(&req)),
                Resume::Done(s) => return s,
            }
        }
    }

    fn a_r_b() -> TaskSpec {
        TaskSpec::new(
            4,
            vec![
                Step::Compute {
                    cost_ns: 10,
                    transform: Transform::AddAll { value: 3 },
                },
                Step::Io(IoTemplate::read(1, OffsetRule::FromState { span: 100 })),
                Step::Compute {
                    cost_ns: 20,
                    transform: Transform::Rotate { by: 1 },
                },
            ],
            vec![1, 2, 3],
        )
    }

    #[test]
    fn two_step_walk() {
        let g = Geometry::default();
        let mut f = make_coroutine(&a_r_b());
        let req = match f.resume(None, &g).unwrap() {
            Resume::SuspendedOnIo(r) => r,
            other => panic!("{other:?}"),
        };
        assert_eq!(f.take_compute_ns(), 10);
        match f.resume(Some(&ok_for(&req)), &g).unwrap() {
            Resume::Done(s) => assert_eq!(s, run_sequential(&a_r_b(), &g)),
            other => panic!("{other:?}"),
        }
        assert_eq!(f.take_compute_ns(), 20);
        assert_eq!(
            f.resume(None, &g),
            Err(CoroutineError::ResumeAfterDone(f.frame_id()))
        );
    }

    #[test]
    fn pure_compute_finishes_on_first_resume() {
        let spec = TaskSpec::new(
            0,
            vec![Step::Compute {
                cost_ns: 1,
                transform: Transform::Identity,
            }],
            vec![7],
        );
        let mut f = make_coroutine(&spec);
        assert_eq!(f.resume(None, &Geometry::default()).unwrap(), Resume::Done(vec![7]));
    }

    #[test]
    fn wrong_completion_is_rejected() {
        let g = Geometry::default();
        let mut f = make_coroutine(&a_r_b());
        let Resume::SuspendedOnIo(req) = f.resume(None, &g).unwrap() else {
            panic!()
        };
        let mut bad = ok_for(&req);
        bad.user_data ^= 1;
        assert!(matches!(
            f.resume(Some(&bad), &g),
            Err(CoroutineError::CompletionMismatch { .. })
        ));
        assert!(f.resume(Some(&ok_for(&req)), &g).is_ok());
    }

    #[test]
    fn nested_frame_is_larger_than_inner() {
        let g = Geometry::default();
        let inner = Arc::new(a_r_b());
        let outer = TaskSpec::new(
            9,
            vec![
                Step::Nested(inner.clone()),
                Step::Compute {
                    cost_ns: 1,
                    transform: Transform::Mix { salt: 1 },
                },
            ],
            vec![5; 8],
        );
        let mut f = make_coroutine(&outer);
        let Resume::SuspendedOnIo(req) = f.resume(None, &g).unwrap() else {
            panic!()
        };
        assert_eq!(f.depth(), 2);
        let inner_bytes = f.child.as_ref().unwrap().frame_bytes();
        assert!(f.frame_bytes() >= inner_bytes);
        let done = f.resume(Some(&ok_for(&req)), &g).unwrap();
        assert_eq!(done, Resume::Done(run_sequential(&outer, &g)));
        let mut again = make_coroutine(&outer);
        assert_eq!(drive(&mut again, &g), run_sequential(&outer, &g));
    }
}
