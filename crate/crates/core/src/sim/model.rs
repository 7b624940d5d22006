use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ring::{Geometry, DEFAULT_BLOCK_SIZE, EIO};

/// A request that the device will fail.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FaultSpec {
    /// Applies to this request id on every attached instance.
    pub request_id: u64,
    #[serde(default = "default_fault_code")]
    pub code: i32,
}

fn default_fault_code() -> i32 {
    EIO
}

/// Parameters of the simulated device: a c-server queue with a fixed
/// (optionally jittered) service time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DeviceModel {
    pub service_time_ns: u64,
    /// Uniform relative jitter: service time is scaled by `1 ± jitter`.
    pub jitter: f64,
    /// Operations in service concurrently.
    pub internal_parallelism: u32,
    pub capacity_bytes: u64,
    pub block_size: u32,
    /// Poll-thread CPU time per consumed SQ entry.
    pub submission_cpu_cost_ns: u64,
    /// Service-time multiplier for reads that do not continue the previous
    /// read of the same instance.
    pub random_read_multiplier: f64,
    /// Delay for a sleeping SQ-poll thread to become active.
    pub wakeup_cost_ns: u64,
    pub fault_plan: Vec<FaultSpec>,
}

impl Default for DeviceModel {
    fn default() -> Self {
        DeviceModel::desk_nvme()
    }
}

impl DeviceModel {
    /// 100 µs service time, 64-way parallelism, ±10% jitter.
    pub fn desk_nvme() -> Self {
        DeviceModel {
            service_time_ns: 100_000,
            jitter: 0.10,
            internal_parallelism: 64,
            capacity_bytes: 1 << 40,
            block_size: DEFAULT_BLOCK_SIZE,
            submission_cpu_cost_ns: 0,
            random_read_multiplier: 1.0,
            wakeup_cost_ns: 5_000,
            fault_plan: Vec::new(),
        }
    }

    pub fn without_jitter(mut self) -> Self {
        self.jitter = 0.0;
        self
    }

    pub fn geometry(&self) -> Geometry {
        Geometry {
            block_size: self.block_size,
            capacity_bytes: self.capacity_bytes,
        }
    }

    pub fn validate(&self) -> Result<(), DeviceError> {
        if self.service_time_ns == 0 {
            return Err(DeviceError::Invalid("service_time_ns must be > 0"));
        }
        if self.internal_parallelism == 0 {
            return Err(DeviceError::Invalid("internal_parallelism must be >= 1"));
        }
        if !(0.0..1.0).contains(&self.jitter) {
            return Err(DeviceError::Invalid("jitter must be in [0, 1)"));
        }
        if self.block_size == 0 || !self.block_size.is_power_of_two() {
            return Err(DeviceError::Invalid("block_size must be a power of two"));
        }
        if self.capacity_bytes < self.block_size as u64 {
            return Err(DeviceError::Invalid("capacity_bytes below one block"));
        }
        if self.random_read_multiplier <= 0.0 {
            return Err(DeviceError::Invalid("random_read_multiplier must be > 0"));
        }
        Ok(())
    }

    /// Little's-law throughput at queue depth `qd` with zero jitter:
    /// `min(qd, parallelism) / service_time`.
    pub fn steady_state_iops(&self, queue_depth: u32) -> f64 {
        steady_state_iops(self, queue_depth)
    }
}

pub fn steady_state_iops(model: &DeviceModel, queue_depth: u32) -> f64 {
    let busy = queue_depth.max(1).min(model.internal_parallelism) as f64;
    busy * 1e9 / model.service_time_ns as f64
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DeviceError {
    #[error("invalid device model: {0}")]
    Invalid(&'static str),
}
