//! Asynchronous I/O runtime architectures over ring-based submission and
//! completion queues.
//!
//! The crate is organised bottom-up:
//!
//! * [`ring`]: request/completion model, lock-free SPSC rings and the
//!   [`ring::ApiInstance`] (one SQ + CQ pair).
//! * [`sim`]: a deterministic discrete-event storage device with bounded
//!   internal parallelism and SQ-poll-thread CPU accounting.
//! * [`partition`]: task model and the three partitioning schemes (full,
//!   callback, coroutine).
//! * [`exec`]: the four execution architectures (shared nothing, direct
//!   access, static and dynamic I/O thread pools), runnable in virtual time
//!   or on real threads.
//! * [`metrics`]: throughput, latency histograms and per-instance
//!   accounting.
//! * `native` (feature `native`, Linux only): the same backend contract
//!   over io_uring.

pub mod clock;
pub mod exec;
pub mod metrics;
pub mod native;
pub mod partition;
pub mod ring;
pub mod sim;

pub use clock::ClockSource;
pub use ring::{
    ApiInstance, Completion, DeviceEndpoint, Geometry, IoKind, IoRequest, IoResult, PushOutcome,
    RequestId, RingConfig,
};
