//! Request/completion model, SPSC rings and the SQ + CQ instance.

mod backend;
mod instance;
mod request;
pub mod spsc;
pub mod thread_tag;

pub use backend::{Backend, InstanceId};
pub use instance::{
    ApiInstance, ChainOutcome, DeviceEndpoint, InstanceDepth, InstanceProbe, PushOutcome, Reaper,
    RingConfig, RingError, Submitter,
};
pub use request::{
    Completion, Geometry, IoKind, IoRequest, IoResult, RequestError, RequestId,
    DEFAULT_BLOCK_SIZE, EINVAL, EIO,
};
