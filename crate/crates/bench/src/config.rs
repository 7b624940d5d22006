use std::path::Path;

use aioarch::exec::{ArchConfig, FioPattern};
use aioarch::native::NativeConfig;
use aioarch::partition::CorpusConfig;
use aioarch::sim::DeviceModel;
use serde::{Deserialize, Serialize};

use crate::BenchError;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    #[default]
    Sim,
    Native,
}

/// Both backend sections are always present; `kind` picks one.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendConfig {
    pub kind: BackendKind,
    pub device: DeviceModel,
    pub native: NativeConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorkloadConfig {
    pub op_count: u64,
    pub op_kind: FioPattern,
    /// Bytes per request; a multiple of the device block size.
    pub block_size: u32,
    /// Per worker.
    pub queue_depth: usize,
    pub callback_cost_ns: u64,
    /// Random tasks used by `verify`.
    pub corpus: CorpusConfig,
}

impl Default for WorkloadConfig {
    fn default() -> Self {
        WorkloadConfig {
            op_count: 1_000_000,
            op_kind: FioPattern::SeqRead,
            block_size: 4096,
            queue_depth: 32,
            callback_cost_ns: 0,
            corpus: CorpusConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub qd_list: Vec<usize>,
    pub cost_list_ns: Vec<u64>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            qd_list: (0..=8).map(|i| 1 << i).collect(),
            cost_list_ns: vec![0, 1_000, 10_000, 100_000],
        }
    }
}

/// Square-wave offered load for `scaling-trace`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScalingConfig {
    pub high: f64,
    pub low: f64,
    pub phase_ns: u64,
    pub periods: usize,
    /// Arrivals per second at fraction 1; 0 means the device maximum.
    pub reference_iops: f64,
}

impl Default for ScalingConfig {
    fn default() -> Self {
        ScalingConfig {
            high: 1.0,
            low: 0.05,
            phase_ns: 50_000_000,
            periods: 2,
            reference_iops: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifyConfig {
    /// Requests per architecture and scheme in the exactly-once check.
    pub ops: u64,
    pub corpus_tasks: usize,
    pub seeds: u64,
    pub spsc_items: u64,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        VerifyConfig {
            ops: 5_000,
            corpus_tasks: 60,
            seeds: 2,
            spsc_items: 100_000,
        }
    }
}

/// Everything one `aio-bench` invocation needs. Every field has a default;
/// `aio-bench --dump-defaults` prints them all.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Must fit in 63 bits so the config stays representable as TOML.
    pub seed: u64,
    pub runs: usize,
    /// One discarded run before the measured ones at every sweep point.
    pub precondition: bool,
    pub backend: BackendConfig,
    /// `seed` and `run_id` in here are overwritten per run.
    pub architecture: ArchConfig,
    pub workload: WorkloadConfig,
    pub sweep: SweepConfig,
    pub scaling: ScalingConfig,
    pub verify: VerifyConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 42,
            runs: 10,
            precondition: true,
            backend: BackendConfig::default(),
            architecture: ArchConfig::default(),
            workload: WorkloadConfig::default(),
            sweep: SweepConfig::default(),
            scaling: ScalingConfig::default(),
            verify: VerifyConfig::default(),
        }
    }
}

fn invalid(path: &str, msg: impl ToString) -> BenchError {
    BenchError::ConfigInvalid {
        path: path.to_string(),
        msg: msg.to_string(),
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, BenchError> {
        toml::from_str(text).map_err(|e| {
            let path = e.span().map(|s| format!("byte {}", s.start)).unwrap_or_default();
            invalid(&path, e.message())
        })
    }

    pub fn load(path: &Path) -> Result<Self, BenchError> {
        let text = std::fs::read_to_string(path).map_err(|e| invalid(&path.display().to_string(), e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String, BenchError> {
        toml::to_string(self).map_err(|e| invalid("", e))
    }

    /// Checks shared by every command except `verify`, which reports ring
    /// and device problems as failed checks instead.
    pub fn validate(&self) -> Result<(), BenchError> {
        self.validate_basic()?;
        self.architecture
            .ring
            .validate()
            .map_err(|e| invalid("architecture.ring", e))?;
        self.backend
            .device
            .validate()
            .map_err(|e| invalid("backend.device", e))?;
        Ok(())
    }

    pub(crate) fn validate_basic(&self) -> Result<(), BenchError> {
        if self.seed > i64::MAX as u64 {
            return Err(invalid("seed", "must be below 2^63"));
        }
        if self.runs == 0 {
            return Err(invalid("runs", "must be >= 1"));
        }
        let a = &self.architecture;
        if a.workers == 0 {
            return Err(invalid("architecture.workers", "must be >= 1"));
        }
        if a.architecture != aioarch::exec::Architecture::SharedNothing && a.instances == 0 {
            return Err(invalid("architecture.instances", "must be >= 1"));
        }
        if a.inbox_capacity == 0 {
            return Err(invalid("architecture.inbox_capacity", "must be >= 1"));
        }
        if !(a.cost.jitter >= 0.0 && a.cost.jitter.is_finite()) {
            return Err(invalid("architecture.cost.jitter", "must be finite and >= 0"));
        }
        a.controller
            .validate()
            .map_err(|e| invalid("architecture.controller", e))?;
        let w = &self.workload;
        if w.op_count == 0 {
            return Err(invalid("workload.op_count", "must be >= 1"));
        }
        if w.queue_depth == 0 {
            return Err(invalid("workload.queue_depth", "must be >= 1"));
        }
        let bs = match self.backend.kind {
            BackendKind::Sim => self.backend.device.block_size,
            BackendKind::Native => self.backend.native.block_size,
        };
        if bs == 0 || w.block_size == 0 || w.block_size % bs != 0 {
            return Err(invalid(
                "workload.block_size",
                format!("{} is not a multiple of the device block size {bs}", w.block_size),
            ));
        }
        if self.sweep.qd_list.is_empty() || self.sweep.qd_list.contains(&0) {
            return Err(invalid("sweep.qd_list", "needs at least one entry, all >= 1"));
        }
        if self.sweep.cost_list_ns.is_empty() {
            return Err(invalid("sweep.cost_list_ns", "needs at least one entry"));
        }
        let s = &self.scaling;
        if s.phase_ns == 0 || s.periods == 0 {
            return Err(invalid("scaling", "phase_ns and periods must be >= 1"));
        }
        for (field, v) in [("scaling.high", s.high), ("scaling.low", s.low)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(invalid(field, "must be finite and >= 0"));
            }
        }
        if !(s.reference_iops >= 0.0 && s.reference_iops.is_finite()) {
            return Err(invalid("scaling.reference_iops", "must be finite and >= 0"));
        }
        if self.backend.kind == BackendKind::Native && self.backend.native.path.as_os_str().is_empty() {
            return Err(invalid("backend.native.path", "required for the native backend"));
        }
        Ok(())
    }

    /// Request size in device blocks.
    pub fn blocks(&self) -> u32 {
        let bs = match self.backend.kind {
            BackendKind::Sim => self.backend.device.block_size,
            BackendKind::Native => self.backend.native.block_size,
        };
        (self.workload.block_size / bs.max(1)).max(1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let cfg = ExperimentConfig::default();
        let text = cfg.to_toml().unwrap();
        assert_eq!(ExperimentConfig::from_toml(&text).unwrap(), cfg);
        cfg.validate().unwrap();
    }

    #[test]
    fn partial_file_fills_defaults() {
        let cfg = ExperimentConfig::from_toml("seed = 7\n[workload]\nqueue_depth = 4\n").unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.workload.queue_depth, 4);
        assert_eq!(cfg.runs, 10);
    }

    #[test]
    fn unknown_field_is_rejected() {
        assert!(matches!(
            ExperimentConfig::from_toml("[workload]\nqdepth = 4\n"),
            Err(BenchError::ConfigInvalid { .. })
        ));
    }

    #[test]
    fn field_path_is_reported() {
        let mut cfg = ExperimentConfig::default();
        cfg.workload.block_size = 1000;
        match cfg.validate() {
            Err(BenchError::ConfigInvalid { path, .. }) => assert_eq!(path, "workload.block_size"),
            other => panic!("{other:?}"),
        }
    }
}
