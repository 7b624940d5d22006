use super::instance::DeviceEndpoint;
use super::request::Geometry;

/// Index of an endpoint attached to a backend.
pub type InstanceId = usize;

/// A device that services the device side of one or more
/// [`super::ApiInstance`]s.
///
/// Implementations consume submissions from each attached endpoint and post
/// exactly one completion per consumed submission.
pub trait Backend: Send {
    fn geometry(&self) -> Geometry;

    fn attach(&mut self, endpoint: DeviceEndpoint) -> InstanceId;

    /// Does whatever work is due at `now_ns` and returns the number of
    /// events processed.
    fn service(&mut self, now_ns: u64) -> usize;

    /// True when no submission is pending and nothing is in service.
    fn is_idle(&self) -> bool;
}
