//! Task model and the three ways of cutting a task into schedulable work:
//! full tasklet partitioning, callback partitioning and coroutine frames.

mod coroutine;
mod run;
mod spec;
mod tasklet;

pub use coroutine::{make_coroutine, make_coroutine_shared, CoroutineError, CoroutineFrame, Resume, ResumePoint};
pub use run::{CompiledTask, Progress, Scheme, TaskRun};
pub use spec::{
    fold_child, fold_completion, generate_corpus, read_corpus, run_sequential, write_corpus, CorpusConfig,
    IoTemplate, OffsetRule, Step, TaskSpec, Transform,
};
pub use tasklet::{partition_callback, partition_full, Instr, Program, SpawnRule, TaskState, Tasklet, TaskletKind};
