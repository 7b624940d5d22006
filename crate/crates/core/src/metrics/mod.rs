//! Throughput, latency and per-instance accounting.

mod histogram;
mod report;

pub use histogram::{LatencyHistogram, BUCKET_GROWTH, MAX_TRACKED_NS, MIN_TRACKED_NS};
pub use report::{merge, FrameStats, InstanceMetrics, MetricsError, MetricsReport};
