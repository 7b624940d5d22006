//! Discrete-event storage device.

pub mod calendar;
mod device;
mod model;
mod poll_thread;

pub use device::{
    write_trace_csv, DeviceInstanceStats, SimDevice, TraceEvent, TraceKind, TRACE_CSV_HEADER,
};
pub use model::{steady_state_iops, DeviceError, DeviceModel, FaultSpec};
pub use poll_thread::{PollState, PollThreadModel, PollTransition};
