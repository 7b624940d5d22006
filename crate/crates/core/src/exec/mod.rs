//! The four execution architectures and their building blocks.
//!
//! Every logical thread (worker, I/O instance, scaling controller) is an
//! [`Actor`]. The same actors run either on real threads against a device
//! thread ([`run_wall`]) or stepped deterministically in virtual time
//! against a [`crate::sim::SimDevice`] ([`VirtualDriver`]).

mod actor;
mod arch;
mod controller;
mod dispatch;
mod driver;
mod handle;
mod pool;
mod unit;
mod worker;
mod workload;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use actor::{spin_for, Actor, ActorId, Cx, Step};
pub use arch::{
    run, run_direct_access, run_dynamic_pool, run_on_backend, run_shared_nothing, run_static_pool,
    RunOutcome,
};
pub use controller::{ControllerConfig, ScalingController};
pub use dispatch::{Dispatch, DispatchLayer, Policy, UnitState, DEFAULT_INBOX_CAPACITY};
pub use driver::{actor_tag, run_wall, VirtualDriver, WallRun, DEVICE_TAG};
pub use handle::{handle_await_spin, handle_poll, HandlePoll, HandleStatus, InlineWork, RequestHandle};
pub use pool::{IoPool, PoolConfig};
pub use unit::{spawn_unit, UnitHandles};
pub use workload::{FioPattern, LoadPhase, LoadProfile, TaskSource, Workload};

use crate::partition::CoroutineError;
use crate::ring::{RequestError, RingConfig, RingError};
use crate::sim::DeviceError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExecError {
    #[error("dependency {before} -> {after} crosses shards")]
    WorkloadNotPartitionable { before: usize, after: usize },
    #[error("pool is shut down")]
    PoolShutdown,
    #[error("deadline passed with {abandoned} requests unfinished")]
    TimeoutExceeded { abandoned: u64 },
    #[error("no runnable actor at {at_ns} ns; still waiting: {waiting:?}")]
    Stalled { at_ns: u64, waiting: Vec<String> },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Ring(#[from] RingError),
    #[error(transparent)]
    Device(#[from] DeviceError),
    #[error(transparent)]
    Request(#[from] RequestError),
    #[error(transparent)]
    Coroutine(#[from] CoroutineError),
}

/// CPU cost, in virtual nanoseconds, of runtime operations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CostModel {
    /// Scheduler overhead per tasklet or frame dispatch.
    pub dispatch_ns: u64,
    pub submit_ns: u64,
    pub reap_ns: u64,
    /// One completion-status check.
    pub poll_ns: u64,
    /// Routing a request through the dispatch layer.
    pub pool_dispatch_ns: u64,
    pub lock_ns: u64,
    /// Extra cost of a lock acquisition that had to wait.
    pub contended_lock_ns: u64,
    pub resume_ns: u64,
    /// Added per nesting level walked by a coroutine resume.
    pub resume_per_level_ns: u64,
    /// Submission syscall when SQ polling is off.
    pub syscall_ns: u64,
    /// Step durations are stretched by a random factor in `[1, 1 + jitter]`.
    pub jitter: f64,
}

impl Default for CostModel {
    fn default() -> Self {
        CostModel {
            dispatch_ns: 20,
            submit_ns: 100,
            reap_ns: 50,
            poll_ns: 20,
            pool_dispatch_ns: 50,
            lock_ns: 30,
            contended_lock_ns: 1_000,
            resume_ns: 30,
            resume_per_level_ns: 30,
            syscall_ns: 1_000,
            jitter: 0.0,
        }
    }
}

impl CostModel {
    /// No runtime overhead at all; isolates the device model.
    pub fn zero() -> Self {
        CostModel {
            dispatch_ns: 0,
            submit_ns: 0,
            reap_ns: 0,
            poll_ns: 0,
            pool_dispatch_ns: 0,
            lock_ns: 0,
            contended_lock_ns: 0,
            resume_ns: 0,
            resume_per_level_ns: 0,
            syscall_ns: 0,
            jitter: 0.0,
        }
    }

    pub fn resume_cost(&self, depth: u32) -> u64 {
        self.resume_ns + self.resume_per_level_ns * depth as u64
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Architecture {
    #[default]
    SharedNothing,
    DirectAccess,
    StaticPool,
    DynamicPool,
}

impl Architecture {
    pub const ALL: [Architecture; 4] = [
        Architecture::SharedNothing,
        Architecture::DirectAccess,
        Architecture::StaticPool,
        Architecture::DynamicPool,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Architecture::SharedNothing => "shared_nothing",
            Architecture::DirectAccess => "direct_access",
            Architecture::StaticPool => "static_pool",
            Architecture::DynamicPool => "dynamic_pool",
        }
    }

    pub fn is_pool(self) -> bool {
        matches!(self, Architecture::StaticPool | Architecture::DynamicPool)
    }
}

/// Where post-I/O work of pool architectures runs.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExecMode {
    /// On the worker that polls the handle.
    #[default]
    IoThreads,
    /// On the I/O instance thread that reaps the completion.
    InlineCallbacks,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Threading {
    #[default]
    SingleThread,
    SubmitReapPair,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClockMode {
    #[default]
    Virtual,
    Wall,
}

/// Everything about a run except the workload and the device.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArchConfig {
    pub architecture: Architecture,
    pub workers: usize,
    /// API instances: one per worker for shared nothing, `m` shared ones
    /// for direct access, `k` I/O instances for the pools.
    pub instances: usize,
    pub scheme: crate::partition::Scheme,
    pub exec_mode: ExecMode,
    pub threading: Threading,
    pub policy: Policy,
    pub controller: ControllerConfig,
    pub ring: RingConfig,
    pub cost: CostModel,
    pub inbox_capacity: usize,
    pub clock: ClockMode,
    pub seed: u64,
    pub run_id: u64,
    /// Wall-clock mode only.
    pub wall_deadline_ms: u64,
    /// Virtual mode gives up once simulated time passes this bound.
    pub virtual_limit_ns: u64,
    /// Record the device event trace into [`RunOutcome::trace`].
    pub trace: bool,
}

impl Default for ArchConfig {
    fn default() -> Self {
        ArchConfig {
            architecture: Architecture::SharedNothing,
            workers: 1,
            instances: 1,
            scheme: crate::partition::Scheme::Full,
            exec_mode: ExecMode::IoThreads,
            threading: Threading::SingleThread,
            policy: Policy::RoundRobin,
            controller: ControllerConfig::default(),
            ring: RingConfig::default(),
            cost: CostModel::default(),
            inbox_capacity: DEFAULT_INBOX_CAPACITY,
            clock: ClockMode::Virtual,
            seed: 0,
            run_id: 0,
            wall_deadline_ms: 60_000,
            virtual_limit_ns: 3_600_000_000_000,
            trace: false,
        }
    }
}

impl ArchConfig {
    pub fn new(architecture: Architecture, workers: usize, instances: usize) -> Self {
        ArchConfig {
            architecture,
            workers,
            instances,
            ..ArchConfig::default()
        }
    }

    pub fn validate(&self) -> Result<(), ExecError> {
        self.ring.validate()?;
        if self.workers == 0 {
            return Err(ExecError::Config("workers must be >= 1".into()));
        }
        if self.architecture != Architecture::SharedNothing && self.instances == 0 {
            return Err(ExecError::Config("instances must be >= 1".into()));
        }
        if self.inbox_capacity == 0 {
            return Err(ExecError::Config("inbox_capacity must be >= 1".into()));
        }
        if !(self.cost.jitter >= 0.0 && self.cost.jitter.is_finite()) {
            return Err(ExecError::Config("cost.jitter must be finite and >= 0".into()));
        }
        self.controller.validate()?;
        Ok(())
    }

    /// API instances actually created.
    pub fn instance_count(&self) -> usize {
        match self.architecture {
            Architecture::SharedNothing => self.workers,
            _ => self.instances,
        }
    }
}
