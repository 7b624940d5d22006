use std::io::{self, BufRead, Write};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::ring::{Completion, Geometry, IoKind, IoRequest, IoResult};

/// Pure transform applied to a task's state bytes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Transform {
    Identity,
    Xor { index: u32, value: u8 },
    AddAll { value: u8 },
    Rotate { by: u32 },
    Mix { salt: u64 },
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

pub(crate) fn fnv(bytes: &[u8]) -> u64 {
    bytes
        .iter()
        .fold(FNV_OFFSET, |h, &b| (h ^ b as u64).wrapping_mul(FNV_PRIME))
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

impl Transform {
    pub fn apply(&self, state: &mut [u8]) {
        if state.is_empty() {
            return;
        }
        match *self {
            Transform::Identity => {}
            Transform::Xor { index, value } => {
                let i = index as usize % state.len();
                state[i] ^= value;
            }
            Transform::AddAll { value } => {
                for b in state.iter_mut() {
                    *b = b.wrapping_add(value);
                }
            }
            Transform::Rotate { by } => {
                let k = by as usize % state.len();
                state.rotate_left(k);
            }
            Transform::Mix { salt } => {
                let mut h = FNV_OFFSET ^ salt;
                for b in state.iter_mut() {
                    h = (h ^ *b as u64).wrapping_mul(FNV_PRIME);
                    *b = (h >> 24) as u8;
                }
            }
        }
    }
}

/// Where an I/O step reads or writes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum OffsetRule {
    Fixed { block: u64 },
    /// Block derived from the current state, so it depends on earlier steps.
    FromState { span: u64 },
    /// `task_id * blocks`: consecutive tasks read consecutive ranges.
    TaskSequential,
    TaskRandom { span: u64, seed: u64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IoTemplate {
    pub kind: IoKind,
    /// Transfer size in blocks; ignored for Fsync and Nop.
    pub blocks: u32,
    pub offset: OffsetRule,
}

impl IoTemplate {
    pub fn read(blocks: u32, offset: OffsetRule) -> Self {
        IoTemplate {
            kind: IoKind::Read,
            blocks,
            offset,
        }
    }

    /// Builds the concrete request for a task in state `state`.
    pub fn resolve(&self, task_id: u64, state: &[u8], geometry: &Geometry) -> IoRequest {
        if !self.kind.moves_data() {
            return match self.kind {
                IoKind::Fsync => IoRequest::fsync(),
                _ => IoRequest::nop(),
            };
        }
        let blocks = self.blocks.max(1) as u64;
        let slots = geometry.blocks().saturating_sub(blocks) + 1;
        let raw = match self.offset {
            OffsetRule::Fixed { block } => block,
            OffsetRule::FromState { span } => fnv(state) % span.max(1),
            OffsetRule::TaskSequential => task_id.wrapping_mul(blocks),
            OffsetRule::TaskRandom { span, seed } => splitmix(seed ^ splitmix(task_id)) % span.max(1),
        };
        let bs = geometry.block_size as u64;
        let offset = (raw % slots) * bs;
        let length = (blocks * bs) as u32;
        match self.kind {
            IoKind::Write => IoRequest::write(offset, length),
            _ => IoRequest::read(offset, length),
        }
    }
}

/// Folds an I/O result into the state so later steps depend on it.
pub fn fold_completion(state: &mut [u8], c: &Completion) {
    let code = match c.result {
        IoResult::Ok(n) => n as u64,
        IoResult::Error(e) => (1 << 32) | e as u32 as u64,
        IoResult::Canceled => 2 << 32,
    };
    Transform::Mix { salt: code }.apply(state);
}

/// Folds a finished nested task's state into its parent.
pub fn fold_child(parent: &mut [u8], child: &[u8]) {
    Transform::Mix { salt: fnv(child) }.apply(parent);
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "step", rename_all = "snake_case")]
pub enum Step {
    Compute { cost_ns: u64, transform: Transform },
    Io(IoTemplate),
    /// A compute step that runs a sub-task with its own state.
    Nested(Arc<TaskSpec>),
}

/// Declarative task: compute steps separated by I/O.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSpec {
    pub task_id: u64,
    pub steps: Vec<Step>,
    #[serde(default)]
    pub initial_state: Vec<u8>,
}

impl TaskSpec {
    pub fn new(task_id: u64, steps: Vec<Step>, initial_state: Vec<u8>) -> Self {
        TaskSpec {
            task_id,
            steps,
            initial_state,
        }
    }

    /// Single read followed by a post-I/O callback.
    pub fn read_then_callback(task_id: u64, read: IoTemplate, callback_cost_ns: u64) -> Self {
        TaskSpec::new(
            task_id,
            vec![
                Step::Io(read),
                Step::Compute {
                    cost_ns: callback_cost_ns,
                    transform: Transform::Identity,
                },
            ],
            Vec::new(),
        )
    }

    /// I/O steps including those of nested sub-tasks.
    pub fn io_count(&self) -> usize {
        self.steps
            .iter()
            .map(|s| match s {
                Step::Io(_) => 1,
                Step::Nested(child) => child.io_count(),
                Step::Compute { .. } => 0,
            })
            .sum()
    }

    pub fn nesting_depth(&self) -> u32 {
        self.steps
            .iter()
            .filter_map(|s| match s {
                Step::Nested(child) => Some(1 + child.nesting_depth()),
                _ => None,
            })
            .max()
            .unwrap_or(0)
    }

    pub fn compute_ns(&self) -> u64 {
        self.steps
            .iter()
            .map(|s| match s {
                Step::Compute { cost_ns, .. } => *cost_ns,
                Step::Nested(child) => child.compute_ns(),
                Step::Io(_) => 0,
            })
            .sum()
    }
}

/// Knobs of the random task generator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusConfig {
    pub max_steps: usize,
    pub max_state_bytes: usize,
    pub max_cost_ns: u64,
    pub nest_probability: f64,
    pub max_nesting: u32,
    /// Offsets drawn from `FromState` rules stay below this block index.
    pub span_blocks: u64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig {
            max_steps: 16,
            max_state_bytes: 32,
            max_cost_ns: 5_000,
            nest_probability: 0.1,
            max_nesting: 2,
            span_blocks: 1 << 20,
        }
    }
}

fn random_transform(rng: &mut ChaCha8Rng) -> Transform {
    match rng.gen_range(0..5) {
        0 => Transform::Identity,
        1 => Transform::Xor {
            index: rng.gen(),
            value: rng.gen(),
        },
        2 => Transform::AddAll { value: rng.gen() },
        3 => Transform::Rotate { by: rng.gen_range(0..64) },
        _ => Transform::Mix { salt: rng.gen() },
    }
}

fn random_io(rng: &mut ChaCha8Rng, cfg: &CorpusConfig) -> IoTemplate {
    let kind = match rng.gen_range(0..10) {
        0..=5 => IoKind::Read,
        6..=7 => IoKind::Write,
        8 => IoKind::Fsync,
        _ => IoKind::Nop,
    };
    let offset = if rng.gen_bool(0.5) {
        OffsetRule::FromState { span: cfg.span_blocks }
    } else {
        OffsetRule::Fixed {
            block: rng.gen_range(0..cfg.span_blocks),
        }
    };
    IoTemplate {
        kind,
        blocks: rng.gen_range(1..=4),
        offset,
    }
}

fn random_spec(rng: &mut ChaCha8Rng, cfg: &CorpusConfig, task_id: u64, depth: u32) -> TaskSpec {
    let steps_len = rng.gen_range(1..=cfg.max_steps.max(1));
    let mut steps = Vec::with_capacity(steps_len);
    for _ in 0..steps_len {
        let r: f64 = rng.gen();
        let step = if depth < cfg.max_nesting && r < cfg.nest_probability {
            let mut child_cfg = cfg.clone();
            child_cfg.max_steps = (cfg.max_steps / 2).max(1);
            Step::Nested(Arc::new(random_spec(rng, &child_cfg, task_id, depth + 1)))
        } else if rng.gen_bool(0.4) {
            Step::Io(random_io(rng, cfg))
        } else {
            Step::Compute {
                cost_ns: rng.gen_range(0..=cfg.max_cost_ns),
                transform: random_transform(rng),
            }
        };
        steps.push(step);
    }
    let state_len = rng.gen_range(1..=cfg.max_state_bytes.max(1));
    let initial_state = (0..state_len).map(|_| rng.gen()).collect();
    TaskSpec::new(task_id, steps, initial_state)
}

/// `count` random tasks with ids `0..count`, fully determined by `seed`.
pub fn generate_corpus(seed: u64, count: usize, cfg: &CorpusConfig) -> Vec<TaskSpec> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count as u64)
        .map(|id| random_spec(&mut rng, cfg, id, 0))
        .collect()
}

/// Writes one JSON document per line.
pub fn write_corpus<W: Write>(mut out: W, corpus: &[TaskSpec]) -> io::Result<()> {
    for spec in corpus {
        serde_json::to_writer(&mut out, spec)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_corpus<R: BufRead>(input: R) -> io::Result<Vec<TaskSpec>> {
    let mut out = Vec::new();
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(io::Error::from)?);
    }
    Ok(out)
}

/// Runs `spec` to completion in program order, completing every I/O with
/// `Ok(length)`. This is the oracle every scheduling scheme must agree with.
pub fn run_sequential(spec: &TaskSpec, geometry: &Geometry) -> Vec<u8> {
    fn go(spec: &TaskSpec, task_id: u64, geometry: &Geometry) -> Vec<u8> {
        let mut state = spec.initial_state.clone();
        for step in &spec.steps {
            match step {
                Step::Compute { transform, .. } => transform.apply(&mut state),
                Step::Io(t) => {
                    let req = t.resolve(task_id, &state, geometry);
                    let c = Completion {
                        request_id: 0,
                        user_data: 0,
                        result: IoResult::Ok(req.length),
                        submit_time: 0,
                        complete_time: 0,
                    };
                    fold_completion(&mut state, &c);
                }
                Step::Nested(child) => {
                    let inner = go(child, task_id, geometry);
                    fold_child(&mut state, &inner);
                }
            }
        }
        state
    }
    go(spec, spec.task_id, geometry)
}
