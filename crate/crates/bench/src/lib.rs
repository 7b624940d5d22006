//! Reproducible sweep experiments over the `aioarch` runtime: queue-depth
//! scaling, callback-cost scaling, dynamic-pool scaling traces and an
//! invariant checker. The `aio-bench` binary is a thin CLI over this crate.

pub mod config;
pub mod experiments;
pub mod plot;
pub mod verify;

use aioarch::exec::ExecError;
use aioarch::native::NativeError;
use thiserror::Error;

pub use config::{BackendConfig, BackendKind, ExperimentConfig, ScalingConfig, SweepConfig, VerifyConfig, WorkloadConfig};
pub use experiments::{
    callback_csv, qd_csv, scaling_csv, scaling_trace, sweep_callback, sweep_qd, timeline_csv, Sample, ScalingTrace,
    SweepOutput,
};
pub use verify::{verify, Check, VerifyReport};

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("invalid config at `{path}`: {msg}")]
    ConfigInvalid { path: String, msg: String },
    #[error(transparent)]
    Exec(#[from] ExecError),
    #[error(transparent)]
    Native(#[from] NativeError),
    #[error("plot: {0}")]
    Plot(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl BenchError {
    /// 2 for configuration problems, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            BenchError::ConfigInvalid { .. } => 2,
            BenchError::Exec(ExecError::Config(_)) => 2,
            _ => 1,
        }
    }
}
