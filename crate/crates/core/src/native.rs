//! The backend contract over Linux io_uring.
//!
//! Only functional with the `native` feature on Linux. Elsewhere
//! [`NativeBackend::open`] returns [`NativeError::UnsupportedPlatform`] and
//! the rest of the crate is unaffected.
//!
//! Each attached [`DeviceEndpoint`] gets its own kernel ring. Read and write
//! requests use a backend-owned registry of page-aligned buffers indexed by
//! [`IoRequest::buffer_id`](crate::ring::IoRequest) modulo the registry
//! size. Linked requests map to `IOSQE_IO_LINK`.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NativeConfig {
    pub path: PathBuf,
    /// Open with `O_DIRECT`.
    pub direct_io: bool,
    /// Kernel SQ polling thread.
    pub sq_poll: bool,
    /// Completion polling (`IORING_SETUP_IOPOLL`); needs direct I/O.
    pub io_poll: bool,
    pub ring_entries: u32,
    pub block_size: u32,
    pub buffers: u32,
    pub buffer_bytes: u32,
}

impl Default for NativeConfig {
    fn default() -> Self {
        NativeConfig {
            path: PathBuf::new(),
            direct_io: true,
            sq_poll: false,
            io_poll: false,
            ring_entries: 256,
            block_size: 4096,
            buffers: 256,
            buffer_bytes: 64 * 1024,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum NativeError {
    #[error("native backend not available on this build or platform")]
    UnsupportedPlatform,
    #[error("{0} requires privileges this process does not have")]
    PrivilegeRequired(&'static str),
    #[error("{what} {value} is not a multiple of the logical block size {logical}")]
    AlignmentError { what: &'static str, value: u64, logical: u32 },
    #[error("{0}")]
    Io(String),
}

/// Logical block size assumed for regular files opened with direct I/O.
pub const LOGICAL_BLOCK: u32 = 512;

fn check_config(cfg: &NativeConfig) -> Result<(), NativeError> {
    if cfg.ring_entries == 0 || cfg.buffers == 0 || cfg.block_size == 0 {
        return Err(NativeError::Io("ring_entries, buffers and block_size must be >= 1".into()));
    }
    if cfg.direct_io {
        for (what, v) in [("block_size", cfg.block_size), ("buffer_bytes", cfg.buffer_bytes)] {
            if v % LOGICAL_BLOCK != 0 {
                return Err(NativeError::AlignmentError {
                    what,
                    value: v as u64,
                    logical: LOGICAL_BLOCK,
                });
            }
        }
    }
    if cfg.io_poll && !cfg.direct_io {
        return Err(NativeError::Io("io_poll needs direct_io".into()));
    }
    Ok(())
}

#[cfg(all(feature = "native", target_os = "linux"))]
mod imp {
    use std::alloc::{alloc_zeroed, dealloc, Layout};
    use std::collections::HashMap;
    use std::fs::{File, OpenOptions};
    use std::io::{self, Seek, SeekFrom};
    use std::os::fd::AsRawFd;
    use std::os::unix::fs::OpenOptionsExt;

    use io_uring::{opcode, squeue, types, IoUring};

    use super::{check_config, NativeConfig, NativeError};
    use crate::ring::{Backend, Completion, DeviceEndpoint, Geometry, InstanceId, IoKind, IoResult, EINVAL};

    struct AlignedBuf {
        ptr: *mut u8,
        layout: Layout,
    }

    // The buffer is plain memory; access is coordinated by the backend.
    unsafe impl Send for AlignedBuf {}

    impl AlignedBuf {
        fn new(len: usize) -> Self {
            let layout = Layout::from_size_align(len.max(1), 4096).expect("buffer layout");
            // SAFETY: layout has non-zero size.
            let ptr = unsafe { alloc_zeroed(layout) };
            assert!(!ptr.is_null(), "buffer allocation failed");
            AlignedBuf { ptr, layout }
        }

        fn as_slice(&self) -> &[u8] {
            // SAFETY: ptr is a live allocation of layout.size() bytes.
            unsafe { std::slice::from_raw_parts(self.ptr, self.layout.size()) }
        }

        fn as_mut_slice(&mut self) -> &mut [u8] {
            // SAFETY: as above, and &mut self gives exclusive access.
            unsafe { std::slice::from_raw_parts_mut(self.ptr, self.layout.size()) }
        }
    }

    impl Drop for AlignedBuf {
        fn drop(&mut self) {
            // SAFETY: allocated in new() with this layout.
            unsafe { dealloc(self.ptr, self.layout) }
        }
    }

    struct Lane {
        ring: IoUring,
        ep: DeviceEndpoint,
        inflight: HashMap<u64, Completion>,
        backlog: Vec<Completion>,
        next_token: u64,
    }

    pub struct NativeBackend {
        cfg: NativeConfig,
        file: File,
        geometry: Geometry,
        buffers: Vec<AlignedBuf>,
        lanes: Vec<Lane>,
        spare: Option<IoUring>,
    }

    fn build_ring(cfg: &NativeConfig) -> Result<IoUring, NativeError> {
        let mut b = IoUring::builder();
        if cfg.sq_poll {
            b.setup_sqpoll(1_000);
        }
        if cfg.io_poll {
            b.setup_iopoll();
        }
        b.build(cfg.ring_entries).map_err(|e| match e.raw_os_error() {
            Some(libc::EPERM) | Some(libc::EACCES) if cfg.sq_poll => NativeError::PrivilegeRequired("sq_poll"),
            Some(libc::ENOSYS) | Some(libc::EPERM) => NativeError::UnsupportedPlatform,
            _ => NativeError::Io(format!("io_uring setup: {e}")),
        })
    }

    fn open_file(cfg: &NativeConfig) -> io::Result<File> {
        let flags = if cfg.direct_io { libc::O_DIRECT } else { 0 };
        match OpenOptions::new().read(true).write(true).custom_flags(flags).open(&cfg.path) {
            Err(e) if e.kind() == io::ErrorKind::PermissionDenied => {
                OpenOptions::new().read(true).custom_flags(flags).open(&cfg.path)
            }
            r => r,
        }
    }

    impl NativeBackend {
        pub fn open(cfg: &NativeConfig) -> Result<Self, NativeError> {
            check_config(cfg)?;
            // The ring comes first so a privilege failure leaves nothing open.
            let ring = build_ring(cfg)?;
            let mut file = open_file(cfg).map_err(|e| NativeError::Io(format!("{}: {e}", cfg.path.display())))?;
            let len = file
                .seek(SeekFrom::End(0))
                .map_err(|e| NativeError::Io(e.to_string()))?;
            let bs = cfg.block_size as u64;
            let geometry = Geometry {
                block_size: cfg.block_size,
                capacity_bytes: len / bs * bs,
            };
            let buffers = (0..cfg.buffers).map(|_| AlignedBuf::new(cfg.buffer_bytes as usize)).collect();
            Ok(NativeBackend {
                cfg: cfg.clone(),
                file,
                geometry,
                buffers,
                lanes: Vec::new(),
                spare: Some(ring),
            })
        }

        pub fn config(&self) -> &NativeConfig {
            &self.cfg
        }

        /// Contents of registry buffer `id`. Only meaningful while no request
        /// using it is in flight.
        pub fn buffer(&self, id: u32) -> &[u8] {
            self.buffers[id as usize % self.buffers.len()].as_slice()
        }

        pub fn buffer_mut(&mut self, id: u32) -> &mut [u8] {
            let n = self.buffers.len();
            self.buffers[id as usize % n].as_mut_slice()
        }

        fn sqe(&mut self, kind: IoKind, offset: u64, length: u32, buffer_id: u32) -> Option<squeue::Entry> {
            let fd = types::Fd(self.file.as_raw_fd());
            Some(match kind {
                IoKind::Read | IoKind::Write => {
                    if length > self.cfg.buffer_bytes {
                        return None;
                    }
                    let n = self.buffers.len();
                    let ptr = self.buffers[buffer_id as usize % n].ptr;
                    if kind == IoKind::Read {
                        opcode::Read::new(fd, ptr, length).offset(offset).build()
                    } else {
                        opcode::Write::new(fd, ptr, length).offset(offset).build()
                    }
                }
                IoKind::Fsync => opcode::Fsync::new(fd).build(),
                IoKind::Nop => opcode::Nop::new().build(),
            })
        }

        fn service_lane(&mut self, i: usize, now: u64) -> usize {
            let mut events = 0;
            let mut pushed = 0;
            loop {
                let lane = &mut self.lanes[i];
                if lane.ring.submission().is_full() {
                    break;
                }
                let Some(req) = lane.ep.take_submission() else { break };
                let token = lane.next_token;
                lane.next_token += 1;
                let template = Completion {
                    request_id: req.request_id,
                    user_data: req.user_data,
                    result: IoResult::Canceled,
                    submit_time: req.submit_time,
                    complete_time: 0,
                };
                let Some(mut sqe) = self.sqe(req.kind, req.offset, req.length, req.buffer_id) else {
                    let lane = &mut self.lanes[i];
                    lane.backlog.push(Completion {
                        result: IoResult::Error(EINVAL),
                        complete_time: now,
                        ..template
                    });
                    events += 1;
                    continue;
                };
                sqe = sqe.user_data(token);
                if req.link {
                    sqe = sqe.flags(squeue::Flags::IO_LINK);
                }
                let lane = &mut self.lanes[i];
                // SAFETY: the buffer behind the SQE lives as long as the
                // backend, and requests sharing a buffer id are the caller's
                // responsibility.
                unsafe {
                    lane.ring.submission().push(&sqe).expect("room was checked");
                }
                lane.inflight.insert(token, template);
                pushed += 1;
                events += 1;
            }
            let lane = &mut self.lanes[i];
            if pushed > 0 || lane.cfg_needs_enter() {
                let _ = lane.ring.submit();
            }
            for cqe in lane.ring.completion() {
                let Some(c) = lane.inflight.remove(&cqe.user_data()) else { continue };
                let res = cqe.result();
                let result = if res >= 0 {
                    IoResult::Ok(res as u32)
                } else if -res == libc::ECANCELED {
                    IoResult::Canceled
                } else {
                    IoResult::Error(-res)
                };
                lane.backlog.push(Completion {
                    result,
                    complete_time: now,
                    ..c
                });
                events += 1;
            }
            let mut kept = Vec::new();
            for c in lane.backlog.drain(..) {
                if let Err(c) = lane.ep.post_completion(c) {
                    kept.push(c);
                }
            }
            lane.backlog = kept;
            events
        }
    }

    impl Lane {
        /// Completion-polling rings only make progress inside io_uring_enter.
        fn cfg_needs_enter(&self) -> bool {
            !self.inflight.is_empty() && self.ring.params().is_setup_iopoll()
        }
    }

    impl Backend for NativeBackend {
        fn geometry(&self) -> Geometry {
            self.geometry
        }

        /// # Panics
        /// If the kernel refuses to create another ring.
        fn attach(&mut self, ep: DeviceEndpoint) -> InstanceId {
            let ring = match self.spare.take() {
                Some(r) => r,
                None => build_ring(&self.cfg).expect("creating an additional io_uring"),
            };
            self.lanes.push(Lane {
                ring,
                ep,
                inflight: HashMap::new(),
                backlog: Vec::new(),
                next_token: 0,
            });
            self.lanes.len() - 1
        }

        fn service(&mut self, now_ns: u64) -> usize {
            (0..self.lanes.len()).map(|i| self.service_lane(i, now_ns)).sum()
        }

        fn is_idle(&self) -> bool {
            self.lanes
                .iter()
                .all(|l| l.inflight.is_empty() && l.backlog.is_empty() && l.ep.pending() == 0)
        }
    }
}

#[cfg(not(all(feature = "native", target_os = "linux")))]
mod imp {
    use std::convert::Infallible;

    use super::{check_config, NativeConfig, NativeError};
    use crate::ring::{Backend, DeviceEndpoint, Geometry, InstanceId};

    /// Placeholder: cannot be constructed on this build.
    pub struct NativeBackend {
        never: Infallible,
    }

    impl NativeBackend {
        pub fn open(cfg: &NativeConfig) -> Result<Self, NativeError> {
            check_config(cfg)?;
            Err(NativeError::UnsupportedPlatform)
        }

        pub fn config(&self) -> &NativeConfig {
            match self.never {}
        }

        pub fn buffer(&self, _id: u32) -> &[u8] {
            match self.never {}
        }

        pub fn buffer_mut(&mut self, _id: u32) -> &mut [u8] {
            match self.never {}
        }
    }

    impl Backend for NativeBackend {
        fn geometry(&self) -> Geometry {
            match self.never {}
        }

        fn attach(&mut self, _ep: DeviceEndpoint) -> InstanceId {
            match self.never {}
        }

        fn service(&mut self, _now_ns: u64) -> usize {
            match self.never {}
        }

        fn is_idle(&self) -> bool {
            match self.never {}
        }
    }
}

pub use imp::NativeBackend;

/// True when this build can open a native backend at all.
pub const AVAILABLE: bool = cfg!(all(feature = "native", target_os = "linux"));
